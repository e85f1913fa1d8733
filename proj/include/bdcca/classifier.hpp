#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "bdcca/augment.hpp"
#include "bdcca/common.hpp"
#include "bdcca/dsp.hpp"
#include "bdcca/nn.hpp"
#include "bdcca/rng.hpp"

namespace bdcca {

// Frame-wise binary detector: three 2-D conv blocks with frequency-only
// pooling (time preserved end to end), one bidirectional GRU, per-frame
// affine head with logistic output.
struct ClassifierConfig {
  int input_height = 257;  // spectrogram bins or embedding width
  std::vector<int> conv_channels = {16, 32, 32};
  int conv_kernel = 3;
  int freq_pool = 4;
  int gru_hidden = 64;
  // log(1 + x) at the input; used for raw power spectrograms, off for
  // embeddings. Stored with the parameters so inference matches training.
  bool log_front_end = true;

  void validate() const {
    if (input_height < 1) throw config_error("classifier: input_height >= 1");
    if (conv_channels.empty())
      throw config_error("classifier: need at least one conv block");
    if (conv_kernel < 1 || conv_kernel % 2 == 0)
      throw config_error("classifier: conv kernel must be positive odd");
    if (freq_pool < 1) throw config_error("classifier: freq_pool >= 1");
    if (gru_hidden < 1) throw config_error("classifier: gru_hidden >= 1");
  }

  int gru_input_dim() const {
    int f = input_height;
    for (std::size_t i = 0; i < conv_channels.size(); ++i)
      f = nn::MaxPoolFreq::out_f(f, freq_pool);
    return conv_channels.back() * f;
  }
};

struct DetectionConfig {
  double threshold = 0.6;

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0))
      throw config_error(cat("detection: threshold must lie in (0,1), got ",
                             threshold));
  }
};

class Classifier {
 public:
  Classifier(const ClassifierConfig& cfg, Rng rng) : cfg_(cfg) {
    cfg.validate();
    int in_ch = 1;
    for (int ch : cfg.conv_channels) {
      convs_.emplace_back(in_ch, ch, cfg.conv_kernel, rng);
      norms_.emplace_back(ch);
      relus_.emplace_back();
      pools_.emplace_back(cfg.freq_pool);
      in_ch = ch;
    }
    gru_ = std::make_unique<nn::BiGru>(cfg.gru_input_dim(), cfg.gru_hidden, rng);
    head_ = std::make_unique<nn::Linear>(2 * cfg.gru_hidden, 1, rng);
  }

  Classifier(const Classifier& other)
      : cfg_(other.cfg_),
        convs_(other.convs_),
        norms_(other.norms_),
        relus_(other.relus_),
        pools_(other.pools_),
        fold_(other.fold_),
        gru_(std::make_unique<nn::BiGru>(*other.gru_)),
        head_(std::make_unique<nn::Linear>(*other.head_)) {}
  Classifier& operator=(const Classifier&) = delete;
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  // Features arrive as (height x t) matrices, one per clip; internally each
  // clip is a single-channel (f, t) image.
  nn::FeatureBatch forward(const nn::FeatureBatch& x, bool train) {
    if (x.data.rows() != 1 || x.f != cfg_.input_height)
      throw shape_error(cat("classifier: expected 1 x (clips*", cfg_.input_height,
                            "*t) layout, got ", x.data.rows(), " channels, f=",
                            x.f));
    nn::FeatureBatch h = x;
    if (cfg_.log_front_end) h.data = (1.0 + h.data.array()).log();
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i].forward(h, train);
      h = norms_[i].forward(h, train);
      h = relus_[i].forward(h, train);
      h = pools_[i].forward(h, train);
    }
    h = fold_.forward(h, train);
    h = gru_->forward(h, train);
    return head_->forward(h, train);  // logits, (1 x clips*t)
  }

  void backward(const nn::FeatureBatch& dlogits) {
    nn::FeatureBatch d = head_->backward(dlogits, true);
    d = gru_->backward(d, true);
    d = fold_.backward(d);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      d = pools_[i].backward(d);
      d = relus_[i].backward(d);
      d = norms_[i].backward(d);
      d = convs_[i].backward(d, i > 0);
    }
  }

  std::vector<nn::TensorRef> tensors(const std::string& prefix = "clf") {
    std::vector<nn::TensorRef> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      auto c = convs_[i].tensors(cat(prefix, ".conv", i));
      out.insert(out.end(), c.begin(), c.end());
      auto n = norms_[i].tensors(cat(prefix, ".norm", i));
      out.insert(out.end(), n.begin(), n.end());
    }
    auto g = gru_->tensors(prefix + ".gru");
    out.insert(out.end(), g.begin(), g.end());
    auto h = head_->tensors(prefix + ".head");
    out.insert(out.end(), h.begin(), h.end());
    return out;
  }

  const ClassifierConfig& config() const { return cfg_; }

 private:
  ClassifierConfig cfg_;
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::BatchNorm> norms_;
  std::vector<nn::Relu> relus_;
  std::vector<nn::MaxPoolFreq> pools_;
  nn::FreqToChannels fold_;
  std::unique_ptr<nn::BiGru> gru_;
  std::unique_ptr<nn::Linear> head_;
};

struct LabeledFeatures {
  Eigen::MatrixXd features;  // height x t
  FrameTrack labels;         // binary, length t
  std::string clip_id;
};

struct ClassifierTrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  int epochs = 50;
  int batch_size = 8;
  std::uint64_t seed = 0;
  // Labeled-set balance: positive-containing clips are duplicated with
  // masking augmentation until positive frames reach this share of all
  // frames (0 disables).
  double min_positive_fraction = 0.2;
  AugmentConfig augment;

  void validate() const {
    if (learning_rate < 0.0)
      throw config_error("classifier: learning_rate must be >= 0");
    if (epochs < 0 || batch_size < 1)
      throw config_error("classifier: bad epochs/batch_size");
    if (min_positive_fraction < 0.0 || min_positive_fraction >= 1.0)
      throw config_error("classifier: min_positive_fraction in [0,1)");
  }
};

struct EpochLog {
  int epoch = 0;
  double bce = 0.0;
};

namespace detail {

// Mean binary cross entropy from logits plus its logit gradient.
inline double bce_from_logits(const Eigen::MatrixXd& logits,
                              const Eigen::MatrixXd& targets,
                              Eigen::MatrixXd* dlogits) {
  const double n = static_cast<double>(logits.cols());
  double loss = 0.0;
  if (dlogits) dlogits->resize(1, logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double l = logits(0, j), y = targets(0, j);
    loss += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
    if (dlogits) (*dlogits)(0, j) = (1.0 / (1.0 + std::exp(-l)) - y) / n;
  }
  return loss / n;
}

inline nn::FeatureBatch stack_features(
    const std::vector<const LabeledFeatures*>& items, int height) {
  const int t = static_cast<int>(items.front()->features.cols());
  nn::FeatureBatch b{Eigen::MatrixXd(1, static_cast<Eigen::Index>(items.size()) *
                                            height * t),
                     static_cast<int>(items.size()), height, t};
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& f = items[i]->features;
    if (f.rows() != height || f.cols() != t)
      throw shape_error(cat("classifier: clip '", items[i]->clip_id, "' is ",
                            f.rows(), "x", f.cols(), ", expected ", height, "x",
                            t));
    // (f, t) image flattened to the single-channel row, f-major.
    for (int fi = 0; fi < height; ++fi)
      b.data.block(0, (static_cast<Eigen::Index>(i) * height + fi) * t, 1, t) =
          f.row(fi);
  }
  return b;
}

}  // namespace detail

// Duplicates positive-containing clips under fresh masking until positive
// frames reach the requested share. Labels are untouched by masking.
inline std::vector<LabeledFeatures> balance_labeled_set(
    const std::vector<LabeledFeatures>& items, const ClassifierTrainConfig& cfg) {
  if (cfg.min_positive_fraction <= 0.0) return items;
  double pos = 0.0, total = 0.0;
  std::vector<std::size_t> positives;
  for (std::size_t i = 0; i < items.size(); ++i) {
    double p = 0.0;
    for (double v : items[i].labels.values) p += v;
    pos += p;
    total += static_cast<double>(items[i].labels.values.size());
    if (p > 0.0) positives.push_back(i);
  }
  std::vector<LabeledFeatures> out = items;
  if (positives.empty()) {
    warn("classifier: labeled set has no positive frames; skipping balance");
    return out;
  }
  Rng rng(derive_seed(cfg.seed, "labeled-balance"));
  std::size_t cursor = 0;
  while (pos < cfg.min_positive_fraction * total &&
         out.size() < items.size() * 16) {
    const auto& src = items[positives[cursor % positives.size()]];
    ++cursor;
    Spectrogram s;
    s.values = src.features;
    LabeledFeatures copy;
    copy.features = spec_augment(s, cfg.augment, rng).values;
    copy.labels = src.labels;
    copy.clip_id = src.clip_id + cat("#aug", cursor);
    double p = 0.0;
    for (double v : copy.labels.values) p += v;
    pos += p;
    total += static_cast<double>(copy.labels.values.size());
    out.push_back(std::move(copy));
  }
  return out;
}

// Gradient descent on mean per-frame binary cross entropy.
inline std::vector<EpochLog> train_classifier(
    Classifier& model, const std::vector<LabeledFeatures>& raw_items,
    const ClassifierTrainConfig& cfg) {
  cfg.validate();
  const auto items = balance_labeled_set(raw_items, cfg);
  if (items.empty()) throw validation_error("classifier: empty training set");

  bool any_pos = false, any_neg = false;
  for (const auto& it : items) {
    it.labels.validate();
    if (it.labels.kind != FrameTrack::Kind::BinaryLabel)
      throw validation_error("classifier: labels must be binary");
    for (double v : it.labels.values) (v > 0.0 ? any_pos : any_neg) = true;
  }
  if (!any_pos || !any_neg)
    warn("classifier: training labels are single-class");

  const int height = model.config().input_height;
  auto refs = model.tensors();
  nn::Sgd opt(cfg.learning_rate, cfg.momentum);
  Rng shuffle_rng(derive_seed(cfg.seed, "classifier-shuffle"));

  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochLog> log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      std::vector<const LabeledFeatures*> batch;
      for (std::size_t i = at; i < std::min(order.size(), at + cfg.batch_size); ++i)
        batch.push_back(&items[order[i]]);

      nn::FeatureBatch x = detail::stack_features(batch, height);
      nn::FeatureBatch logits = model.forward(x, true);

      Eigen::MatrixXd targets(1, logits.data.cols());
      for (std::size_t i = 0; i < batch.size(); ++i)
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(
                                         batch[i]->labels.values.size());
             ++j)
          targets(0, static_cast<Eigen::Index>(i) * logits.t + j) =
              batch[i]->labels.values[static_cast<std::size_t>(j)];

      Eigen::MatrixXd dlogits;
      const double loss = detail::bce_from_logits(logits.data, targets, &dlogits);
      if (!std::isfinite(loss))
        throw error(cat("classifier: non-finite loss in epoch ", epoch));
      epoch_loss += loss;
      ++n_batches;

      nn::Sgd::zero_grads(refs);
      model.backward({dlogits, logits.clips, 1, logits.t});
      opt.step(refs);
    }
    log.push_back({epoch, epoch_loss / static_cast<double>(n_batches)});
  }
  return log;
}

// Per-frame event probabilities, inference mode, strictly inside (0, 1).
inline FrameTrack predict_frames(Classifier& model,
                                 const Eigen::MatrixXd& features) {
  const int height = model.config().input_height;
  if (features.rows() != height)
    throw shape_error(cat("predict_frames: features are ", features.rows(),
                          " high, model expects ", height));
  LabeledFeatures tmp;
  tmp.features = features;
  nn::FeatureBatch x = detail::stack_features({&tmp}, height);
  nn::FeatureBatch logits = model.forward(x, false);

  FrameTrack track;
  track.kind = FrameTrack::Kind::Probability;
  track.values.resize(static_cast<std::size_t>(logits.data.cols()));
  for (Eigen::Index j = 0; j < logits.data.cols(); ++j) {
    const double p = 1.0 / (1.0 + std::exp(-logits.data(0, j)));
    track.values[static_cast<std::size_t>(j)] =
        std::min(1.0 - 1e-12, std::max(1e-12, p));
  }
  return track;
}

// Unit step with U(0) = 0: a frame is active iff probability > threshold.
inline FrameTrack binarize(const FrameTrack& track, const DetectionConfig& cfg) {
  cfg.validate();
  if (track.kind != FrameTrack::Kind::Probability)
    throw validation_error("binarize: expected a probability track");
  FrameTrack out;
  out.kind = FrameTrack::Kind::BinaryLabel;
  out.clip_id = track.clip_id;
  out.values.resize(track.values.size());
  for (std::size_t i = 0; i < track.values.size(); ++i)
    out.values[i] = track.values[i] > cfg.threshold ? 1.0 : 0.0;
  return out;
}

}  // namespace bdcca
