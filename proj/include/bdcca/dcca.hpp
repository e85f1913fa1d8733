#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bdcca/cca.hpp"
#include "bdcca/common.hpp"
#include "bdcca/dsp.hpp"
#include "bdcca/nn.hpp"
#include "bdcca/rng.hpp"
#include "bdcca/sampler.hpp"

namespace bdcca {

// Four temporal convolutions over the frame axis; the first three carry
// batch normalization and a rectified-linear activation, the last is linear
// so embeddings are unbounded. Output length equals input length.
struct EncoderConfig {
  int in_channels = 257;
  std::vector<int> hidden = {128, 128, 64};
  int output_width = 50;  // o
  int kernel = 5;

  void validate() const {
    if (in_channels < 1 || output_width < 1)
      throw config_error("encoder: channel counts must be >= 1");
    if (kernel < 1 || kernel % 2 == 0)
      throw config_error("encoder: kernel must be a positive odd number");
    for (int h : hidden)
      if (h < 1) throw config_error("encoder: hidden widths must be >= 1");
  }
};

class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, Rng rng) : cfg_(cfg) {
    cfg.validate();
    int in = cfg.in_channels;
    for (int h : cfg.hidden) {
      convs_.emplace_back(in, h, cfg.kernel, rng);
      norms_.emplace_back(h);
      relus_.emplace_back();
      in = h;
    }
    convs_.emplace_back(in, cfg.output_width, cfg.kernel, rng);
  }

  nn::FeatureBatch forward(const nn::FeatureBatch& x, bool train) {
    nn::FeatureBatch h = x;
    for (std::size_t i = 0; i < norms_.size(); ++i) {
      h = convs_[i].forward(h, train);
      h = norms_[i].forward(h, train);
      h = relus_[i].forward(h, train);
    }
    return convs_.back().forward(h, train);
  }

  // Accumulates parameter gradients; the input gradient is not materialized.
  void backward(const nn::FeatureBatch& dy) {
    nn::FeatureBatch d = convs_.back().backward(dy, true);
    for (std::size_t i = norms_.size(); i-- > 0;) {
      d = relus_[i].backward(d);
      d = norms_[i].backward(d);
      d = convs_[i].backward(d, i > 0);
    }
  }

  std::vector<nn::TensorRef> tensors(const std::string& prefix) {
    std::vector<nn::TensorRef> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      auto t = convs_[i].tensors(cat(prefix, ".conv", i));
      out.insert(out.end(), t.begin(), t.end());
      if (i < norms_.size()) {
        auto n = norms_[i].tensors(cat(prefix, ".norm", i));
        out.insert(out.end(), n.begin(), n.end());
      }
    }
    return out;
  }

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<nn::Conv1d> convs_;
  std::vector<nn::BatchNorm> norms_;
  std::vector<nn::Relu> relus_;
};

struct DccaModel {
  Encoder mic;
  Encoder accel;
  double r1 = 1e-4;

  DccaModel(const EncoderConfig& mic_cfg, const EncoderConfig& accel_cfg,
            double r1_, std::uint64_t seed)
      : mic(mic_cfg, Rng(derive_seed(seed, "encoder.mic"))),
        accel(accel_cfg, Rng(derive_seed(seed, "encoder.accel"))),
        r1(r1_) {
    if (mic_cfg.output_width != accel_cfg.output_width)
      throw config_error(cat("dcca: encoders must share output width, got ",
                             mic_cfg.output_width, " and ",
                             accel_cfg.output_width));
  }

  int output_width() const { return mic.config().output_width; }

  std::vector<nn::TensorRef> tensors() {
    auto out = mic.tensors("mic");
    auto a = accel.tensors("accel");
    out.insert(out.end(), a.begin(), a.end());
    return out;
  }
};

// Embeddings for one spectrogram, inference mode: (o x t).
inline Eigen::MatrixXd encode(Encoder& enc, const Spectrogram& x) {
  if (x.freq_bins() != enc.config().in_channels)
    throw shape_error(cat("encode: spectrogram has ", x.freq_bins(),
                          " bins, encoder expects ", enc.config().in_channels));
  nn::FeatureBatch b{x.values, 1, 1, static_cast<int>(x.frames())};
  return enc.forward(b, false).data;
}

// Inference over many clips; workers run on private copies of the encoder.
inline std::vector<Eigen::MatrixXd> encode_all(
    const Encoder& enc, const std::vector<const Spectrogram*>& clips,
    unsigned max_threads = 0) {
  std::vector<Eigen::MatrixXd> out(clips.size());
  unsigned hw = max_threads ? max_threads : std::thread::hardware_concurrency();
  hw = std::max(1u, std::min<unsigned>(hw, 4));
  const std::size_t chunk = (clips.size() + hw - 1) / std::max<std::size_t>(1, hw);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < hw; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(clips.size(), lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      Encoder local = enc;
      for (std::size_t i = lo; i < hi; ++i) out[i] = encode(local, *clips[i]);
    });
  }
  for (auto& t : pool) t.join();
  return out;
}

struct DccaLoss {
  double value = 0.0;         // -(trace norm of T)
  Eigen::MatrixXd grad_h1;    // d value / d h1
  Eigen::MatrixXd grad_h2;
};

// Negated total correlation of two embedding batches (o x m), with analytic
// gradients with respect to the raw (uncentered) embeddings. Uses the
// delta-rule form of the trace-norm derivative through the whitened
// cross-covariance SVD.
inline DccaLoss dcca_loss(const Eigen::MatrixXd& h1, const Eigen::MatrixXd& h2,
                          double r1) {
  if (h1.cols() != h2.cols())
    throw shape_error(cat("dcca_loss: sample count mismatch, ", h1.cols(),
                          " vs ", h2.cols()));
  const Eigen::Index m = h1.cols();
  const double inv = 1.0 / static_cast<double>(m - 1);

  const Eigen::MatrixXd hc1 = detail::center_rows(h1);
  const Eigen::MatrixXd hc2 = detail::center_rows(h2);
  Eigen::MatrixXd c11 = inv * (hc1 * hc1.transpose());
  Eigen::MatrixXd c22 = inv * (hc2 * hc2.transpose());
  c11.diagonal().array() += r1;
  c22.diagonal().array() += r1;
  const Eigen::MatrixXd c12 = inv * (hc1 * hc2.transpose());

  const Eigen::MatrixXd k1 = detail::sym_inv_sqrt(c11);
  const Eigen::MatrixXd k2 = detail::sym_inv_sqrt(c22);
  const Eigen::MatrixXd t = k1 * c12 * k2;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(t, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::MatrixXd& u = svd.matrixU();
  const Eigen::MatrixXd& v = svd.matrixV();
  const Eigen::VectorXd& sig = svd.singularValues();

  const Eigen::MatrixXd d12 = k1 * u * v.transpose() * k2;
  const Eigen::MatrixXd d11 =
      -0.5 * (k1 * u * sig.asDiagonal() * u.transpose() * k1);
  const Eigen::MatrixXd d22 =
      -0.5 * (k2 * v * sig.asDiagonal() * v.transpose() * k2);

  // d corr / d centered-h, then fold in the centering projection (subtract
  // the per-row mean) to get the raw-h gradient; negate for the loss.
  Eigen::MatrixXd g1 = inv * (2.0 * d11 * hc1 + d12 * hc2);
  Eigen::MatrixXd g2 = inv * (2.0 * d22 * hc2 + d12.transpose() * hc1);
  g1.colwise() -= g1.rowwise().mean().eval();
  g2.colwise() -= g2.rowwise().mean().eval();

  DccaLoss out;
  out.value = -sig.sum();
  out.grad_h1 = -g1;
  out.grad_h2 = -g2;
  return out;
}

struct DccaTrainConfig {
  int batch_size = 8;       // clips per step
  double learning_rate = 1e-3;
  double momentum = 0.0;
  int steps = 500;
  std::uint64_t seed = 0;
  double r1 = 1e-4;

  void validate() const {
    if (batch_size < 1) throw config_error("dcca: batch_size must be >= 1");
    if (learning_rate < 0.0) throw config_error("dcca: learning_rate must be >= 0");
    if (steps < 0) throw config_error("dcca: steps must be >= 0");
    if (r1 <= 0.0) throw config_error("dcca: r1 must be > 0 for training");
  }
};

struct DccaStepLog {
  int step = 0;
  double loss = 0.0;
};

struct DccaTrainLog {
  std::vector<DccaStepLog> steps;
  double probe_initial = 0.0;  // loss on a frozen probe batch before training
  double probe_final = 0.0;
};

// Training batches come from the sampler: synchronized (mic, accel) pairs.
using BatchSource = std::function<BalancedBatch()>;

namespace detail {

inline nn::FeatureBatch stack_clips(const std::vector<const Spectrogram*>& clips) {
  const auto f = clips.front()->freq_bins();
  const auto t = clips.front()->frames();
  nn::FeatureBatch b{Eigen::MatrixXd(f, static_cast<Eigen::Index>(clips.size()) * t),
                     static_cast<int>(clips.size()), 1, static_cast<int>(t)};
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i]->freq_bins() != f || clips[i]->frames() != t)
      throw shape_error("dcca: ragged clip shapes within a batch");
    b.data.middleCols(static_cast<Eigen::Index>(i) * t, t) = clips[i]->values;
  }
  return b;
}

inline std::vector<const Spectrogram*> mic_side(const BalancedBatch& b) {
  std::vector<const Spectrogram*> out;
  out.reserve(b.items.size());
  for (const auto& item : b.items) out.push_back(item.mic);
  return out;
}

inline std::vector<const Spectrogram*> accel_side(const BalancedBatch& b) {
  std::vector<const Spectrogram*> out;
  out.reserve(b.items.size());
  for (const auto& item : b.items) out.push_back(item.accel);
  return out;
}

}  // namespace detail

// Gradient descent on the negated total correlation of the two encoders'
// pooled per-frame embeddings. The batch source owns all sampling state.
inline DccaTrainLog train_dcca(DccaModel& model, const BatchSource& source,
                               const DccaTrainConfig& cfg) {
  cfg.validate();
  const int o = model.output_width();
  if (cfg.batch_size < o)
    warn(cat("dcca: batch_size ", cfg.batch_size, " below output width ", o,
             "; covariance estimates may be poor"));

  // Frozen probe batch, evaluated in inference mode before and after.
  const BalancedBatch probe = source();
  auto probe_loss = [&]() {
    Encoder mic_copy = model.mic;
    Encoder accel_copy = model.accel;
    const Eigen::MatrixXd h1 =
        mic_copy.forward(detail::stack_clips(detail::mic_side(probe)), false).data;
    const Eigen::MatrixXd h2 =
        accel_copy.forward(detail::stack_clips(detail::accel_side(probe)), false)
            .data;
    return dcca_loss(h1, h2, cfg.r1).value;
  };

  auto probe_ids = [&probe] {
    std::string ids;
    for (const auto& item : probe.items) ids += item.clip_id + " ";
    return ids;
  };
  DccaTrainLog log;
  try {
    log.probe_initial = probe_loss();
  } catch (const error& e) {
    throw error(cat("dcca: probe evaluation failed; batch: ", probe_ids(), "(",
                    e.what(), ")"));
  }

  auto refs = model.tensors();
  nn::Sgd opt(cfg.learning_rate, cfg.momentum);
  for (int step = 0; step < cfg.steps; ++step) {
    const BalancedBatch batch = source();
    auto batch_ids = [&batch] {
      std::string ids;
      for (const auto& item : batch.items) ids += item.clip_id + " ";
      return ids;
    };
    nn::FeatureBatch x1 = detail::stack_clips(detail::mic_side(batch));
    nn::FeatureBatch x2 = detail::stack_clips(detail::accel_side(batch));
    nn::FeatureBatch h1 = model.mic.forward(x1, true);
    nn::FeatureBatch h2 = model.accel.forward(x2, true);

    DccaLoss loss;
    try {
      loss = dcca_loss(h1.data, h2.data, cfg.r1);
    } catch (const error& e) {
      throw error(cat("dcca: loss failed at step ", step, "; batch: ",
                      batch_ids(), "(", e.what(), ")"));
    }
    if (!std::isfinite(loss.value))
      throw error(cat("dcca: non-finite loss at step ", step, "; batch: ",
                      batch_ids()));
    log.steps.push_back({step, loss.value});

    nn::Sgd::zero_grads(refs);
    model.mic.backward({loss.grad_h1, h1.clips, 1, h1.t});
    model.accel.backward({loss.grad_h2, h2.clips, 1, h2.t});
    opt.step(refs);
  }

  log.probe_final = probe_loss();
  return log;
}

}  // namespace bdcca
