#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "bdcca/checkpoint.hpp"
#include "bdcca/classifier.hpp"
#include "bdcca/config.hpp"
#include "bdcca/data.hpp"
#include "bdcca/dcca.hpp"
#include "bdcca/eval.hpp"
#include "bdcca/report.hpp"
#include "bdcca/sampler.hpp"

namespace bdcca {

namespace detail {

inline std::uint64_t fnv64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex16(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

class StageTimer {
 public:
  explicit StageTimer(std::vector<StageInfo>& sink, std::string name)
      : sink_(sink), info_{std::move(name), 0.0, "", false},
        start_(std::chrono::steady_clock::now()) {}
  void set_key(const std::string& key, bool cached) {
    info_.cache_key = key;
    info_.cached = cached;
  }
  ~StageTimer() {
    info_.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    sink_.push_back(info_);
  }

 private:
  std::vector<StageInfo>& sink_;
  StageInfo info_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

// Orchestrates the stages per mode:
//   bdcca: bootstrap -> occupancy index -> balanced two-view training ->
//          embed -> detector -> segment evaluation
//   dcca:  same but with single-bin uniform sampling and no bootstrap/index
//   dcrnn / dcrnn-accel: detector directly on the labeled spectrograms
// Trained artifacts are content-addressed under <out>/cache; a stage whose
// config (and upstream keys) is unchanged is reloaded instead of retrained.
// Freshly trained parameters are round-tripped through their checkpoint
// before use so cached and fresh runs produce identical downstream bits.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::filesystem::create_directories(cache_dir());
    std::filesystem::create_directories(logs_dir());
  }

  const PipelineConfig& config() const { return cfg_; }
  const DatasetSplit& dataset() {
    ensure_dataset();
    return dataset_;
  }

  RunResult run_mode(Mode mode) {
    ensure_dataset();
    RunResult result;
    result.mode = mode;
    result.seed = cfg_.seed;

    std::vector<Eigen::MatrixXd> train_features, test_features;
    int feature_height = 0;
    bool log_front_end = false;
    std::string upstream;

    if (mode == Mode::Dcrnn || mode == Mode::DcrnnAccel) {
      feature_height = cfg_.stft.freq_bins();
      log_front_end = true;
      const bool accel = mode == Mode::DcrnnAccel;
      upstream = accel ? "accel-spectrograms" : "mic-spectrograms";
      for (std::size_t i : train_idx_)
        train_features.push_back(accel ? dataset_.labeled[i].accel.values
                                       : dataset_.labeled[i].mic.values);
      for (std::size_t i : test_idx_)
        test_features.push_back(accel ? dataset_.labeled[i].accel.values
                                      : dataset_.labeled[i].mic.values);
    } else {
      DccaModel model = stage_dcca(mode, result.stages, &result, &upstream);
      // Single-modality inference: only the mic encoder is consulted from
      // here on.
      detail::StageTimer timer(result.stages, "embed");
      feature_height = cfg_.encoder_output_width;
      log_front_end = false;
      std::vector<const Spectrogram*> train_ptrs, test_ptrs;
      for (std::size_t i : train_idx_) train_ptrs.push_back(&dataset_.labeled[i].mic);
      for (std::size_t i : test_idx_) test_ptrs.push_back(&dataset_.labeled[i].mic);
      train_features = encode_all(model.mic, train_ptrs);
      test_features = encode_all(model.mic, test_ptrs);
    }

    Classifier detector = stage_detector(mode, upstream, feature_height,
                                         log_front_end, train_features,
                                         result.stages);

    // Evaluation on the held-out labeled clips.
    detail::StageTimer timer(result.stages, "evaluate");
    for (std::size_t k = 0; k < test_idx_.size(); ++k) {
      const auto& clip = dataset_.labeled[test_idx_[k]];
      FrameTrack probs = predict_frames(detector, test_features[k]);
      probs.clip_id = clip.clip_id;
      result.predictions.push_back({clip.clip_id, probs});
      const FrameTrack pred = binarize(probs, cfg_.detection);
      result.per_clip.push_back(
          {clip.clip_id, segment_scores(clip.labels, pred, clip.mic.frame_hop,
                                        cfg_.eval_segment_length)});
    }
    std::vector<SegmentMetrics> per_clip;
    for (const auto& [id, m] : result.per_clip) per_clip.push_back(m);
    result.metrics = aggregate(per_clip);
    return result;
  }

  RunResult run() { return run_with_stage_names(cfg_.mode); }

  // Writes metrics.json, CSV logs, and stacked per-clip figures.
  void write_report(const std::vector<RunResult>& results) {
    ensure_dataset();
    namespace fs = std::filesystem;
    const fs::path out(cfg_.out_dir);
    detail::write_file(out / "metrics.json", render_metrics_json(cfg_, results));
    detail::write_file(out / "per_clip.csv", render_per_clip_csv(results));
    detail::write_file(out / "timings.csv", render_timings_csv(results));

    fs::create_directories(out / "figures");
    for (const auto& r : results) {
      detail::write_file(out / cat("predictions-", mode_name(r.mode), ".csv"),
                         render_prediction_csv(r.predictions));
      const std::size_t n_figures = std::min<std::size_t>(3, r.predictions.size());
      for (std::size_t k = 0; k < n_figures; ++k) {
        const auto& clip = dataset_.labeled[test_idx_[k]];
        write_clip_figure(
            out / "figures" / cat(mode_name(r.mode), "-", clip.clip_id, ".ppm"),
            clip.mic, clip.labels, binarize(r.predictions[k].second, cfg_.detection));
      }
    }
  }

 private:
  RunResult run_with_stage_names(Mode mode) {
    try {
      return run_mode(mode);
    } catch (const error& e) {
      throw error(cat("pipeline[", mode_name(mode), "]: ", e.what()));
    }
  }

  std::filesystem::path cache_dir() const {
    return std::filesystem::path(cfg_.out_dir) / "cache";
  }
  std::filesystem::path logs_dir() const {
    return std::filesystem::path(cfg_.out_dir) / "logs";
  }

  void ensure_dataset() {
    if (dataset_ready_) return;
    if (cfg_.source == PipelineConfig::Source::Synth) {
      SynthConfig synth = cfg_.synth;
      synth.seed = derive_seed(cfg_.seed, "dataset");
      dataset_ = synthesize(synth, cfg_.stft).split;
    } else {
      dataset_ = ingest(cfg_.data_root,
                        parse_manifest(cfg_.data_root.empty()
                                           ? cfg_.manifest_path
                                           : (std::filesystem::path(cfg_.data_root) /
                                              cfg_.manifest_path)
                                                 .string()),
                        cfg_.stft);
    }
    if (dataset_.labeled.size() < 2)
      throw validation_error("pipeline: need at least 2 labeled clips");

    std::vector<std::size_t> indices(dataset_.labeled.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    auto [train, test] =
        split_train_test(indices, cfg_.test_fraction, derive_seed(cfg_.seed, "split"));
    train_idx_ = std::move(train);
    test_idx_ = std::move(test);
    dataset_ready_ = true;
  }

  std::string dataset_key() const {
    nlohmann::json j = config_to_json(cfg_);
    nlohmann::json sub = {{"data", j["data"]},
                          {"synth", j["synth"]},
                          {"stft", j["stft"]},
                          {"seed", cfg_.seed}};
    return detail::hex16(detail::fnv64(sub.dump()));
  }

  ClassifierConfig detector_arch(int height, bool log_front_end) const {
    ClassifierConfig arch;
    arch.input_height = height;
    arch.conv_channels = cfg_.classifier_arch.conv_channels;
    arch.freq_pool = cfg_.classifier_arch.freq_pool;
    arch.gru_hidden = cfg_.classifier_arch.gru_hidden;
    arch.log_front_end = log_front_end;
    return arch;
  }

  // Mask widths must stay below the feature axes; embedding features are
  // much shorter than spectrograms, so clamp per stage.
  ClassifierTrainConfig classifier_train_config(const std::string& tag,
                                                int height, int frames) const {
    ClassifierTrainConfig c = cfg_.classifier;
    c.augment = cfg_.augment;
    c.augment.max_freq_width = std::min(c.augment.max_freq_width, height - 1);
    c.augment.max_time_width = std::min(c.augment.max_time_width, frames - 1);
    c.seed = derive_seed(cfg_.seed, tag + "-train");
    return c;
  }

  std::vector<LabeledFeatures> labeled_features(
      const std::vector<Eigen::MatrixXd>& features) const {
    std::vector<LabeledFeatures> items;
    for (std::size_t k = 0; k < train_idx_.size(); ++k) {
      const auto& clip = dataset_.labeled[train_idx_[k]];
      items.push_back({features[k], clip.labels, clip.clip_id});
    }
    return items;
  }

  // Trains (or reloads) a classifier over the given training features.
  // `tag` names the artifact, `upstream` fingerprints whatever produced the
  // features, and `seed_tag` keeps init/shuffle seeds mode-independent where
  // runs are meant to be paired.
  Classifier classifier_stage(const std::string& tag, const std::string& seed_tag,
                              const std::string& upstream,
                              const ClassifierConfig& arch,
                              const std::vector<LabeledFeatures>& items,
                              std::vector<StageInfo>& stages) {
    detail::StageTimer timer(stages, tag);
    nlohmann::json j = config_to_json(cfg_);
    nlohmann::json sub = {{"dataset", dataset_key()},
                          {"classifier", j["classifier"]},
                          {"augment", j["augment"]},
                          {"height", arch.input_height},
                          {"log", arch.log_front_end},
                          {"upstream", upstream},
                          {"tag", tag},
                          {"seed", cfg_.seed}};
    const std::string key = detail::hex16(detail::fnv64(sub.dump()));
    const auto path = cache_dir() / cat(tag, "-", key, ".bdcc");

    Classifier model(arch, Rng(derive_seed(cfg_.seed, seed_tag + "-init")));
    if (std::filesystem::exists(path)) {
      load_tensors(path.string(), model.tensors());
      timer.set_key(key, true);
      return model;
    }
    const int frames = items.empty()
                           ? 1
                           : static_cast<int>(items.front().features.cols());
    const auto log = train_classifier(
        model, items,
        classifier_train_config(seed_tag, arch.input_height, frames));
    save_tensors(path.string(), model.tensors());
    load_tensors(path.string(), model.tensors());  // f32 round trip
    detail::write_file(logs_dir() / cat(tag, "-", key, ".csv"),
                       render_epoch_log_csv(log));
    timer.set_key(key, false);
    return model;
  }

  Classifier stage_detector(Mode mode, const std::string& upstream, int height,
                            bool log_front_end,
                            const std::vector<Eigen::MatrixXd>& train_features,
                            std::vector<StageInfo>& stages) {
    return classifier_stage(cat("detector-", mode_name(mode)), "detector",
                            upstream, detector_arch(height, log_front_end),
                            labeled_features(train_features), stages);
  }

  // Bootstrap classifier on the labeled-train accelerometer spectrograms.
  Classifier stage_bootstrap(std::vector<StageInfo>& stages) {
    std::vector<Eigen::MatrixXd> features;
    for (std::size_t i : train_idx_)
      features.push_back(dataset_.labeled[i].accel.values);
    return classifier_stage("bootstrap", "bootstrap", "accel-spectrograms",
                            detector_arch(cfg_.stft.freq_bins(), true),
                            labeled_features(features), stages);
  }

  OccupancyIndex stage_index(const Classifier& bootstrap,
                             std::vector<StageInfo>& stages) {
    detail::StageTimer timer(stages, "build-index");
    nlohmann::json j = config_to_json(cfg_);
    nlohmann::json sub = {{"dataset", dataset_key()},
                          {"binning", j["binning"]},
                          {"detection", j["detection"]},
                          {"classifier", j["classifier"]},
                          {"seed", cfg_.seed}};
    const std::string key = detail::hex16(detail::fnv64(sub.dump()));
    const auto path = cache_dir() / cat("index-", key, ".csv");

    if (std::filesystem::exists(path)) {
      std::ifstream in(path);
      std::stringstream buffer;
      buffer << in.rdbuf();
      timer.set_key(key, true);
      return index_from_csv(buffer.str(), cfg_.binning.bins);
    }
    std::vector<const Spectrogram*> accel;
    for (const auto& c : dataset_.unlabeled) accel.push_back(&c.accel);
    const OccupancyIndex index =
        build_index(accel, bootstrap, cfg_.detection, cfg_.binning);
    detail::write_file(path, index_to_csv(index));
    timer.set_key(key, false);
    return index;
  }

  DccaModel stage_dcca(Mode mode, std::vector<StageInfo>& stages,
                       RunResult* result, std::string* key_out) {
    if (dataset_.unlabeled.empty())
      throw validation_error("pipeline: two-view training needs unlabeled clips");

    OccupancyIndex index;
    BinningConfig sampling = cfg_.binning;
    sampling.batch_size = cfg_.dcca.batch_size;
    sampling.augment = cfg_.augment;
    std::vector<const Spectrogram*> mic, accel;
    for (const auto& c : dataset_.unlabeled) {
      mic.push_back(&c.mic);
      accel.push_back(&c.accel);
    }

    if (mode == Mode::Bdcca) {
      const Classifier bootstrap = stage_bootstrap(stages);
      index = stage_index(bootstrap, stages);
    } else {
      // Plain uniform sampling: one bin holding every clip.
      index = uniform_index(accel);
      sampling.bins = 1;
      sampling.min_bin_population = 1;
    }

    detail::StageTimer timer(stages, cat("train-dcca-", mode_name(mode)));
    nlohmann::json j = config_to_json(cfg_);
    nlohmann::json sub = {{"dataset", dataset_key()},
                          {"encoder", j["encoder"]},
                          {"dcca", j["dcca"]},
                          {"binning", mode == Mode::Bdcca ? j["binning"] : nlohmann::json("uniform")},
                          {"augment", j["augment"]},
                          {"detection", j["detection"]},
                          {"classifier", j["classifier"]},
                          {"mode", mode_name(mode)},
                          {"seed", cfg_.seed}};
    const std::string key = detail::hex16(detail::fnv64(sub.dump()));
    if (key_out) *key_out = "dcca-" + key;
    const auto path = cache_dir() / cat("dcca-", mode_name(mode), "-", key, ".bdcc");

    // Mode-independent seeds: with a single bin the balanced path reproduces
    // the uniform path draw for draw under the same run seed.
    EncoderConfig enc = cfg_.encoder_config();
    DccaTrainConfig train_cfg = cfg_.dcca;
    train_cfg.seed = derive_seed(cfg_.seed, "dcca-model");
    DccaModel model(enc, enc, train_cfg.r1, train_cfg.seed);

    if (std::filesystem::exists(path)) {
      load_tensors(path.string(), model.tensors());
      timer.set_key(key, true);
      return model;
    }
    BatchSampler sampler(index, mic, accel, sampling,
                         derive_seed(cfg_.seed, "sampler"));
    const DccaTrainLog log =
        train_dcca(model, [&sampler] { return sampler.next(); }, train_cfg);
    save_tensors(path.string(), model.tensors());
    load_tensors(path.string(), model.tensors());  // f32 round trip
    detail::write_file(logs_dir() / cat("dcca-", mode_name(mode), "-", key, ".csv"),
                       render_step_log_csv(log.steps));
    if (result) {
      result->dcca_probe_initial = log.probe_initial;
      result->dcca_probe_final = log.probe_final;
    }
    timer.set_key(key, false);
    return model;
  }

  PipelineConfig cfg_;
  DatasetSplit dataset_;
  std::vector<std::size_t> train_idx_, test_idx_;
  bool dataset_ready_ = false;
};

}  // namespace bdcca
