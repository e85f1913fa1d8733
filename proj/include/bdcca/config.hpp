#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdcca/augment.hpp"
#include "bdcca/classifier.hpp"
#include "bdcca/common.hpp"
#include "bdcca/data.hpp"
#include "bdcca/dcca.hpp"
#include "bdcca/dsp.hpp"
#include "bdcca/sampler.hpp"

namespace bdcca {

enum class Mode { Dcrnn, DcrnnAccel, Dcca, Bdcca };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Dcrnn: return "dcrnn";
    case Mode::DcrnnAccel: return "dcrnn-accel";
    case Mode::Dcca: return "dcca";
    case Mode::Bdcca: return "bdcca";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "dcrnn") return Mode::Dcrnn;
  if (s == "dcrnn-accel") return Mode::DcrnnAccel;
  if (s == "dcca") return Mode::Dcca;
  if (s == "bdcca") return Mode::Bdcca;
  throw config_error("mode must be dcrnn|dcrnn-accel|dcca|bdcca, got '" + s + "'");
}

// Architecture knobs for the detector; the input height and front end are
// derived per mode at runtime.
struct ClassifierArch {
  std::vector<int> conv_channels = {8, 16, 16};
  int freq_pool = 4;
  int gru_hidden = 32;
};

// Everything a run needs. Defaults are the desk-scale synthetic preset; a
// config file overrides fields selectively, and unknown keys are errors.
// The single run seed fans out to per-stage derived seeds.
struct PipelineConfig {
  Mode mode = Mode::Bdcca;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  // data
  enum class Source { Synth, Manifest } source = Source::Synth;
  std::string data_root;
  std::string manifest_path = "manifest.json";
  double test_fraction = 0.2;

  SynthConfig synth = [] {
    SynthConfig s;
    return s;
  }();

  StftConfig stft = [] {
    StftConfig s;  // desk preset; the type default stays 512/512/256
    s.n_fft = 256;
    s.win_length = 256;
    s.hop_length = 256;
    s.clip_seconds = 2.0;
    return s;
  }();

  AugmentConfig augment = [] {
    AugmentConfig a;
    a.max_freq_width = 12;
    a.max_time_width = 12;
    return a;
  }();

  BinningConfig binning = [] {
    BinningConfig b;
    b.bins = 6;
    return b;
  }();

  // encoder widths; in_channels = stft.freq_bins() at runtime
  std::vector<int> encoder_hidden = {32, 32, 32};
  int encoder_output_width = 16;
  int encoder_kernel = 5;

  DccaTrainConfig dcca = [] {
    DccaTrainConfig d;
    d.batch_size = 8;
    d.learning_rate = 5e-4;
    d.steps = 300;
    d.r1 = 1e-4;
    return d;
  }();

  ClassifierArch classifier_arch;
  ClassifierTrainConfig classifier = [] {
    ClassifierTrainConfig c;
    c.learning_rate = 0.1;
    c.momentum = 0.9;
    c.epochs = 60;
    c.batch_size = 8;
    c.min_positive_fraction = 0.2;
    return c;
  }();

  DetectionConfig detection;
  double eval_segment_length = 0.25;  // seconds

  void validate() const {
    stft.validate();
    augment.validate();
    binning.validate();
    synth.validate();
    dcca.validate();
    classifier.validate();
    detection.validate();
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
      throw config_error("data.test_fraction must lie in (0,1)");
    if (eval_segment_length <= 0.0)
      throw config_error("eval.segment_length must be > 0");
    if (encoder_output_width < 1 || encoder_kernel < 1)
      throw config_error("encoder: bad output_width/kernel");
  }

  EncoderConfig encoder_config() const {
    EncoderConfig e;
    e.in_channels = stft.freq_bins();
    e.hidden = encoder_hidden;
    e.output_width = encoder_output_width;
    e.kernel = encoder_kernel;
    return e;
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& section,
                           const std::vector<std::string>& known) {
  for (auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw config_error(cat("config: unknown key '", section, ".", key, "'"));
  }
}

}  // namespace detail

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["run"] = {{"mode", mode_name(c.mode)}, {"seed", c.seed}, {"out", c.out_dir}};
  j["data"] = {{"source", c.source == PipelineConfig::Source::Synth ? "synth" : "manifest"},
               {"root", c.data_root},
               {"manifest", c.manifest_path},
               {"test_fraction", c.test_fraction}};
  j["synth"] = {{"n_clips", c.synth.n_clips},
                {"n_labeled", c.synth.n_labeled},
                {"clip_seconds", c.synth.clip_seconds},
                {"sample_rate", c.synth.sample_rate},
                {"event_rate", c.synth.event_rate},
                {"event_duration_min", c.synth.event_duration_min},
                {"event_duration_max", c.synth.event_duration_max},
                {"snr_mic", c.synth.snr_mic},
                {"snr_accel", c.synth.snr_accel},
                {"cross_map", c.synth.cross_map == SynthConfig::CrossMap::SharedChirps
                                  ? "shared-chirps"
                                  : "filtered-copy"},
                {"background_level", c.synth.background_level}};
  j["stft"] = {{"n_fft", c.stft.n_fft},
               {"win_length", c.stft.win_length},
               {"hop_length", c.stft.hop_length},
               {"clip_seconds", c.stft.clip_seconds}};
  j["augment"] = {{"num_freq_masks", c.augment.num_freq_masks},
                  {"max_freq_width", c.augment.max_freq_width},
                  {"num_time_masks", c.augment.num_time_masks},
                  {"max_time_width", c.augment.max_time_width},
                  {"fill", c.augment.fill == AugmentConfig::Fill::Zero
                               ? "zero"
                               : "spectrogram-mean"}};
  j["binning"] = {{"bins", c.binning.bins},
                  {"batch_size", c.binning.batch_size},
                  {"min_bin_population", c.binning.min_bin_population}};
  j["encoder"] = {{"hidden", c.encoder_hidden},
                  {"output_width", c.encoder_output_width},
                  {"kernel", c.encoder_kernel}};
  j["dcca"] = {{"batch_size", c.dcca.batch_size},
               {"learning_rate", c.dcca.learning_rate},
               {"momentum", c.dcca.momentum},
               {"steps", c.dcca.steps},
               {"r1", c.dcca.r1}};
  j["classifier"] = {{"conv_channels", c.classifier_arch.conv_channels},
                     {"freq_pool", c.classifier_arch.freq_pool},
                     {"gru_hidden", c.classifier_arch.gru_hidden},
                     {"learning_rate", c.classifier.learning_rate},
                     {"momentum", c.classifier.momentum},
                     {"epochs", c.classifier.epochs},
                     {"batch_size", c.classifier.batch_size},
                     {"min_positive_fraction", c.classifier.min_positive_fraction}};
  j["detection"] = {{"threshold", c.detection.threshold}};
  j["eval"] = {{"segment_length", c.eval_segment_length}};
  return j;
}

// Applies a config file over the defaults. Every key is optional; unknown
// keys anywhere are errors.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  detail::reject_unknown(j, "", {"run", "data", "synth", "stft", "augment",
                                 "binning", "encoder", "dcca", "classifier",
                                 "detection", "eval"});
  if (j.contains("run")) {
    const auto& r = j.at("run");
    detail::reject_unknown(r, "run", {"mode", "seed", "out"});
    if (r.contains("mode")) c.mode = parse_mode(r.at("mode").get<std::string>());
    if (r.contains("seed")) c.seed = r.at("seed").get<std::uint64_t>();
    if (r.contains("out")) c.out_dir = r.at("out").get<std::string>();
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown(d, "data", {"source", "root", "manifest", "test_fraction"});
    if (d.contains("source")) {
      const std::string s = d.at("source").get<std::string>();
      if (s == "synth") c.source = PipelineConfig::Source::Synth;
      else if (s == "manifest") c.source = PipelineConfig::Source::Manifest;
      else throw config_error("config: data.source must be synth|manifest");
    }
    if (d.contains("root")) c.data_root = d.at("root").get<std::string>();
    if (d.contains("manifest")) c.manifest_path = d.at("manifest").get<std::string>();
    if (d.contains("test_fraction")) c.test_fraction = d.at("test_fraction").get<double>();
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    detail::reject_unknown(s, "synth",
                           {"n_clips", "n_labeled", "clip_seconds", "sample_rate",
                            "event_rate", "event_duration_min", "event_duration_max",
                            "snr_mic", "snr_accel", "cross_map", "background_level"});
    if (s.contains("n_clips")) c.synth.n_clips = s.at("n_clips").get<int>();
    if (s.contains("n_labeled")) c.synth.n_labeled = s.at("n_labeled").get<int>();
    if (s.contains("clip_seconds")) c.synth.clip_seconds = s.at("clip_seconds").get<double>();
    if (s.contains("sample_rate")) c.synth.sample_rate = s.at("sample_rate").get<int>();
    if (s.contains("event_rate")) c.synth.event_rate = s.at("event_rate").get<double>();
    if (s.contains("event_duration_min"))
      c.synth.event_duration_min = s.at("event_duration_min").get<double>();
    if (s.contains("event_duration_max"))
      c.synth.event_duration_max = s.at("event_duration_max").get<double>();
    if (s.contains("snr_mic")) c.synth.snr_mic = s.at("snr_mic").get<double>();
    if (s.contains("snr_accel")) c.synth.snr_accel = s.at("snr_accel").get<double>();
    if (s.contains("cross_map")) {
      const std::string m = s.at("cross_map").get<std::string>();
      if (m == "shared-chirps") c.synth.cross_map = SynthConfig::CrossMap::SharedChirps;
      else if (m == "filtered-copy") c.synth.cross_map = SynthConfig::CrossMap::FilteredCopy;
      else throw config_error("config: synth.cross_map must be shared-chirps|filtered-copy");
    }
    if (s.contains("background_level"))
      c.synth.background_level = s.at("background_level").get<double>();
  }
  if (j.contains("stft")) {
    const auto& s = j.at("stft");
    detail::reject_unknown(s, "stft", {"n_fft", "win_length", "hop_length", "clip_seconds"});
    if (s.contains("n_fft")) c.stft.n_fft = s.at("n_fft").get<int>();
    if (s.contains("win_length")) c.stft.win_length = s.at("win_length").get<int>();
    if (s.contains("hop_length")) c.stft.hop_length = s.at("hop_length").get<int>();
    if (s.contains("clip_seconds")) c.stft.clip_seconds = s.at("clip_seconds").get<double>();
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    detail::reject_unknown(a, "augment",
                           {"num_freq_masks", "max_freq_width", "num_time_masks",
                            "max_time_width", "fill"});
    if (a.contains("num_freq_masks")) c.augment.num_freq_masks = a.at("num_freq_masks").get<int>();
    if (a.contains("max_freq_width")) c.augment.max_freq_width = a.at("max_freq_width").get<int>();
    if (a.contains("num_time_masks")) c.augment.num_time_masks = a.at("num_time_masks").get<int>();
    if (a.contains("max_time_width")) c.augment.max_time_width = a.at("max_time_width").get<int>();
    if (a.contains("fill")) {
      const std::string f = a.at("fill").get<std::string>();
      if (f == "zero") c.augment.fill = AugmentConfig::Fill::Zero;
      else if (f == "spectrogram-mean") c.augment.fill = AugmentConfig::Fill::SpectrogramMean;
      else throw config_error("config: augment.fill must be zero|spectrogram-mean");
    }
  }
  if (j.contains("binning")) {
    const auto& b = j.at("binning");
    detail::reject_unknown(b, "binning", {"bins", "batch_size", "min_bin_population"});
    if (b.contains("bins")) c.binning.bins = b.at("bins").get<int>();
    if (b.contains("batch_size")) c.binning.batch_size = b.at("batch_size").get<int>();
    if (b.contains("min_bin_population"))
      c.binning.min_bin_population = b.at("min_bin_population").get<int>();
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::reject_unknown(e, "encoder", {"hidden", "output_width", "kernel"});
    if (e.contains("hidden")) c.encoder_hidden = e.at("hidden").get<std::vector<int>>();
    if (e.contains("output_width")) c.encoder_output_width = e.at("output_width").get<int>();
    if (e.contains("kernel")) c.encoder_kernel = e.at("kernel").get<int>();
  }
  if (j.contains("dcca")) {
    const auto& d = j.at("dcca");
    detail::reject_unknown(d, "dcca",
                           {"batch_size", "learning_rate", "momentum", "steps", "r1"});
    if (d.contains("batch_size")) c.dcca.batch_size = d.at("batch_size").get<int>();
    if (d.contains("learning_rate")) c.dcca.learning_rate = d.at("learning_rate").get<double>();
    if (d.contains("momentum")) c.dcca.momentum = d.at("momentum").get<double>();
    if (d.contains("steps")) c.dcca.steps = d.at("steps").get<int>();
    if (d.contains("r1")) c.dcca.r1 = d.at("r1").get<double>();
  }
  if (j.contains("classifier")) {
    const auto& k = j.at("classifier");
    detail::reject_unknown(k, "classifier",
                           {"conv_channels", "freq_pool", "gru_hidden", "learning_rate",
                            "momentum", "epochs", "batch_size", "min_positive_fraction"});
    if (k.contains("conv_channels"))
      c.classifier_arch.conv_channels = k.at("conv_channels").get<std::vector<int>>();
    if (k.contains("freq_pool")) c.classifier_arch.freq_pool = k.at("freq_pool").get<int>();
    if (k.contains("gru_hidden")) c.classifier_arch.gru_hidden = k.at("gru_hidden").get<int>();
    if (k.contains("learning_rate")) c.classifier.learning_rate = k.at("learning_rate").get<double>();
    if (k.contains("momentum")) c.classifier.momentum = k.at("momentum").get<double>();
    if (k.contains("epochs")) c.classifier.epochs = k.at("epochs").get<int>();
    if (k.contains("batch_size")) c.classifier.batch_size = k.at("batch_size").get<int>();
    if (k.contains("min_positive_fraction"))
      c.classifier.min_positive_fraction = k.at("min_positive_fraction").get<double>();
  }
  if (j.contains("detection")) {
    const auto& d = j.at("detection");
    detail::reject_unknown(d, "detection", {"threshold"});
    if (d.contains("threshold")) c.detection.threshold = d.at("threshold").get<double>();
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::reject_unknown(e, "eval", {"segment_length"});
    if (e.contains("segment_length")) c.eval_segment_length = e.at("segment_length").get<double>();
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw io_error(cat("config: bad JSON in ", path, ": ", e.what()));
  }
  return config_from_json(j);
}

}  // namespace bdcca
