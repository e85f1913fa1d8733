#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdcca/common.hpp"
#include "bdcca/dsp.hpp"
#include "bdcca/rng.hpp"
#include "bdcca/wav.hpp"

namespace bdcca {

struct LabeledClip {
  std::string clip_id;
  Spectrogram mic;
  Spectrogram accel;
  FrameTrack labels;  // binary, aligned to the spectrogram frames
};

struct UnlabeledClip {
  std::string clip_id;
  Spectrogram mic;
  Spectrogram accel;
};

struct DatasetSplit {
  std::vector<LabeledClip> labeled;
  std::vector<UnlabeledClip> unlabeled;

  void validate() const {
    std::set<std::string> ids;
    for (const auto& c : labeled) {
      if (!ids.insert(c.clip_id).second)
        throw validation_error("dataset: duplicate clip_id " + c.clip_id);
      if (static_cast<Eigen::Index>(c.labels.values.size()) != c.mic.frames())
        throw shape_error(cat("dataset: clip ", c.clip_id, " has ",
                              c.labels.values.size(), " labels for ",
                              c.mic.frames(), " frames"));
    }
    for (const auto& c : unlabeled)
      if (!ids.insert(c.clip_id).second)
        throw validation_error("dataset: duplicate clip_id " + c.clip_id);
  }
};

// ---------------------------------------------------------------------------
// Manifest + annotations ingestion.
// ---------------------------------------------------------------------------

struct ManifestFile {
  std::string path;
  std::string id;  // defaults to the path stem
  bool labeled = false;
  int mic_channel = 0;
  std::vector<int> accel_channels;  // exactly two
};

struct Manifest {
  std::vector<ManifestFile> files;
  std::string annotations;  // CSV path, may be empty
};

inline Manifest parse_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("manifest: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw io_error(cat("manifest: bad JSON in ", path, ": ", e.what()));
  }

  Manifest m;
  for (auto& [key, value] : j.items()) {
    if (key == "annotations") {
      m.annotations = value.get<std::string>();
    } else if (key == "files") {
      for (const auto& f : value) {
        ManifestFile mf;
        for (auto& [fk, fv] : f.items()) {
          if (fk == "path") mf.path = fv.get<std::string>();
          else if (fk == "id") mf.id = fv.get<std::string>();
          else if (fk == "role") {
            const std::string role = fv.get<std::string>();
            if (role != "labeled" && role != "unlabeled")
              throw config_error("manifest: role must be labeled|unlabeled, got " + role);
            mf.labeled = role == "labeled";
          } else if (fk == "mic_channel") mf.mic_channel = fv.get<int>();
          else if (fk == "accel_channels") mf.accel_channels = fv.get<std::vector<int>>();
          else throw config_error("manifest: unknown file key '" + fk + "'");
        }
        if (mf.path.empty()) throw config_error("manifest: file entry without path");
        if (mf.accel_channels.size() != 2)
          throw config_error(cat("manifest: file ", mf.path,
                                 " needs exactly 2 accel_channels, got ",
                                 mf.accel_channels.size()));
        if (mf.id.empty())
          mf.id = std::filesystem::path(mf.path).stem().string();
        m.files.push_back(std::move(mf));
      }
    } else {
      throw config_error("manifest: unknown key '" + key + "'");
    }
  }
  if (m.files.empty()) throw config_error("manifest: no files listed");
  return m;
}

struct Annotation {
  std::string clip_id;  // file id at ingest time
  std::string channel;  // "male" | "female"
  double onset = 0.0;
  double offset = 0.0;
};

// CSV `clip_id,channel,onset_sec,offset_sec`, decimal seconds, LF endings.
inline std::vector<Annotation> parse_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("annotations: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "clip_id,channel,onset_sec,offset_sec")
    throw io_error("annotations: expected header "
                   "'clip_id,channel,onset_sec,offset_sec' in " + path);
  std::vector<Annotation> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        cells.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (cells.size() != 4)
      throw io_error(cat("annotations: line ", line_no, " has ", cells.size(),
                         " cells, expected 4"));
    Annotation a;
    a.clip_id = cells[0];
    a.channel = cells[1];
    if (a.channel != "male" && a.channel != "female")
      throw io_error(cat("annotations: line ", line_no, ": channel must be "
                         "male|female, got '", a.channel, "'"));
    try {
      a.onset = std::stod(cells[2]);
      a.offset = std::stod(cells[3]);
    } catch (const std::exception&) {
      throw io_error(cat("annotations: line ", line_no, ": bad numbers"));
    }
    if (a.onset < 0.0 || a.offset <= a.onset)
      throw validation_error(cat("annotations: line ", line_no,
                                 ": need 0 <= onset < offset"));
    out.push_back(std::move(a));
  }
  return out;
}

// Reads every manifest file, merges the two accelerometer channels, cuts
// non-overlapping clip_seconds windows (tail remainder dropped), computes
// both spectrograms, and rasterizes the union of the male/female annotation
// tracks onto labeled clips.
inline DatasetSplit ingest(const std::string& root, const Manifest& manifest,
                           const StftConfig& stft) {
  stft.validate();
  std::vector<Annotation> annotations;
  if (!manifest.annotations.empty())
    annotations = parse_annotations(
        (std::filesystem::path(root) / manifest.annotations).string());

  struct FileResult {
    std::vector<LabeledClip> labeled;
    std::vector<UnlabeledClip> unlabeled;
  };
  std::vector<FileResult> results(manifest.files.size());

  parallel_for(manifest.files.size(), [&](std::size_t fi) {
    const ManifestFile& mf = manifest.files[fi];
    const WavData wav =
        read_wav((std::filesystem::path(root) / mf.path).string());
    const int max_ch = std::max(
        {mf.mic_channel, mf.accel_channels[0], mf.accel_channels[1]});
    if (max_ch >= static_cast<int>(wav.channels.size()))
      throw io_error(cat("ingest: ", mf.path, " has ", wav.channels.size(),
                         " channels, manifest needs index ", max_ch));

    Waveform mic{wav.channels[static_cast<std::size_t>(mf.mic_channel)],
                 wav.sample_rate, ChannelId::Microphone};
    Waveform acc_a{wav.channels[static_cast<std::size_t>(mf.accel_channels[0])],
                   wav.sample_rate, ChannelId::AccelMale};
    Waveform acc_b{wav.channels[static_cast<std::size_t>(mf.accel_channels[1])],
                   wav.sample_rate, ChannelId::AccelFemale};
    const Waveform accel = merge_accelerometers(acc_a, acc_b);

    const double file_seconds =
        static_cast<double>(mic.samples.size()) / wav.sample_rate;
    std::vector<Annotation> file_events;
    for (const auto& a : annotations)
      if (a.clip_id == mf.id) {
        if (a.offset > file_seconds + 1e-9)
          throw validation_error(cat("ingest: annotation [", a.onset, ", ",
                                     a.offset, ") outside ", mf.id, " (",
                                     file_seconds, " s)"));
        file_events.push_back(a);
      }
    if (!mf.labeled && !file_events.empty()) {
      warn(cat("ingest: ", mf.id,
               " is unlabeled but has annotations; ignoring them"));
      file_events.clear();
    }

    const auto clip_len = static_cast<std::size_t>(
        std::llround(stft.clip_seconds * wav.sample_rate));
    const std::size_t n_clips = mic.samples.size() / clip_len;
    for (std::size_t c = 0; c < n_clips; ++c) {
      const std::size_t s0 = c * clip_len;
      Waveform mic_clip{{mic.samples.begin() + static_cast<std::ptrdiff_t>(s0),
                         mic.samples.begin() + static_cast<std::ptrdiff_t>(s0 + clip_len)},
                        wav.sample_rate,
                        ChannelId::Microphone};
      Waveform accel_clip{{accel.samples.begin() + static_cast<std::ptrdiff_t>(s0),
                           accel.samples.begin() + static_cast<std::ptrdiff_t>(s0 + clip_len)},
                          wav.sample_rate,
                          ChannelId::AccelMerged};
      const std::string clip_id = cat(mf.id, "_", c < 100 ? (c < 10 ? "00" : "0") : "", c);

      Spectrogram mic_spec = power_spectrogram(mic_clip, stft);
      mic_spec.clip_id = clip_id;
      Spectrogram accel_spec = power_spectrogram(accel_clip, stft);
      accel_spec.clip_id = clip_id;
      accel_spec.channel_id = ChannelId::AccelMerged;

      if (mf.labeled) {
        // Union of both birds' events, shifted into clip time.
        std::vector<EventInterval> events;
        const double clip_on = static_cast<double>(s0) / wav.sample_rate;
        const double clip_off = clip_on + stft.clip_seconds;
        for (const auto& a : file_events) {
          const double on = std::max(a.onset, clip_on);
          const double off = std::min(a.offset, clip_off);
          if (off > on) events.push_back({on - clip_on, off - clip_on});
        }
        FrameTrack labels =
            rasterize_annotations(events, mic_spec.frames(), mic_spec.frame_hop);
        labels.clip_id = clip_id;
        results[fi].labeled.push_back(
            {clip_id, std::move(mic_spec), std::move(accel_spec), std::move(labels)});
      } else {
        results[fi].unlabeled.push_back(
            {clip_id, std::move(mic_spec), std::move(accel_spec)});
      }
    }
  });

  DatasetSplit split;
  for (auto& r : results) {
    for (auto& c : r.labeled) split.labeled.push_back(std::move(c));
    for (auto& c : r.unlabeled) split.unlabeled.push_back(std::move(c));
  }
  split.validate();
  return split;
}

// ---------------------------------------------------------------------------
// Seeded synthetic two-modality generator.
// ---------------------------------------------------------------------------

// Chirp events shared across both views; the accelerometer view is low-pass
// filtered (events up to 1 kHz survive) with its own noise floor, the mic
// view keeps the full band but sits in more noise, and a shared low-frequency
// background couples the views even in silence.
struct SynthConfig {
  int n_clips = 300;
  int n_labeled = 60;
  double clip_seconds = 2.0;
  int sample_rate = 16000;
  double event_rate = 0.6;  // expected events per clip; ~5% positive frames
  double event_duration_min = 0.05;
  double event_duration_max = 0.3;
  double snr_mic = 2.0;    // dB, unit event amplitude vs noise floor
  double snr_accel = 14.0;
  enum class CrossMap { SharedChirps, FilteredCopy } cross_map =
      CrossMap::SharedChirps;
  double background_level = 0.35;  // shared nuisance amplitude
  std::uint64_t seed = 0;

  void validate() const {
    if (n_clips < 1 || n_labeled < 0 || n_labeled > n_clips)
      throw config_error("synth: need 0 <= n_labeled <= n_clips, n_clips >= 1");
    if (clip_seconds <= 0.0) throw config_error("synth: clip_seconds must be > 0");
    if (sample_rate < 2000) throw config_error("synth: sample_rate too low");
    if (event_rate < 0.0) throw config_error("synth: event_rate must be >= 0");
    if (!(0.0 < event_duration_min && event_duration_min <= event_duration_max))
      throw config_error("synth: bad event_duration range");
    if (event_duration_max > clip_seconds)
      throw config_error(cat("synth: event_duration_max ", event_duration_max,
                             " exceeds clip length ", clip_seconds));
  }
};

struct SynthClip {
  Waveform mic;
  Waveform accel;
  std::vector<EventInterval> events;
};

namespace detail {

// Windowed-sinc low-pass FIR, 101 taps.
inline std::vector<double> lowpass_fir(const std::vector<double>& x,
                                       double cutoff_hz, int sample_rate) {
  constexpr int taps = 101;
  const double fc = cutoff_hz / sample_rate;
  std::array<double, taps> h{};
  double sum = 0.0;
  for (int i = 0; i < taps; ++i) {
    const int k = i - taps / 2;
    const double sinc =
        k == 0 ? 2.0 * fc : std::sin(2.0 * M_PI * fc * k) / (M_PI * k);
    const double window =
        0.5 * (1.0 - std::cos(2.0 * M_PI * i / (taps - 1)));  // Hann
    h[static_cast<std::size_t>(i)] = sinc * window;
    sum += h[static_cast<std::size_t>(i)];
  }
  for (auto& v : h) v /= sum;  // unit DC gain

  std::vector<double> y(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < taps; ++j) {
      const std::ptrdiff_t src =
          static_cast<std::ptrdiff_t>(i) - (j - taps / 2);
      if (src >= 0 && src < static_cast<std::ptrdiff_t>(x.size()))
        acc += h[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(src)];
    }
    y[i] = acc;
  }
  return y;
}

inline int poisson_draw(Rng& rng, double lambda) {
  const double limit = std::exp(-lambda);
  int k = 0;
  double p = 1.0;
  while (true) {
    p *= rng.uniform();
    if (p <= limit) return k;
    ++k;
  }
}

inline void quantize_f32(std::vector<double>& v) {
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace detail

// One clip, fully determined by (config, index).
inline SynthClip synthesize_clip(const SynthConfig& cfg, int index) {
  Rng rng(derive_seed(cfg.seed, cat("synth-clip-", index)));
  const auto n = static_cast<std::size_t>(
      std::llround(cfg.clip_seconds * cfg.sample_rate));
  std::vector<double> events_sig(n, 0.0);

  // Per-clip activity weight (mean 1, heavy spread) keeps the corpus sparse
  // while covering the full occupancy range.
  const double weight = -std::log(1.0 - rng.uniform());
  const int n_events = detail::poisson_draw(rng, cfg.event_rate * weight);

  SynthClip clip;
  const double f_hi_cap = std::min(4000.0, 0.45 * cfg.sample_rate);
  for (int e = 0; e < n_events; ++e) {
    const double dur =
        rng.uniform(cfg.event_duration_min, cfg.event_duration_max);
    const double onset = rng.uniform(0.0, cfg.clip_seconds - dur);
    const double f0 = rng.uniform(500.0, f_hi_cap);
    const double f1 = rng.uniform(500.0, f_hi_cap);
    const double amp = rng.uniform(0.5, 1.0);
    const auto s0 = static_cast<std::size_t>(onset * cfg.sample_rate);
    const auto len = static_cast<std::size_t>(dur * cfg.sample_rate);
    for (std::size_t i = 0; i < len && s0 + i < n; ++i) {
      const double tt = static_cast<double>(i) / cfg.sample_rate;
      const double phase =
          2.0 * M_PI * (f0 * tt + 0.5 * (f1 - f0) * tt * tt / dur);
      const double env =
          0.5 * (1.0 - std::cos(2.0 * M_PI * i / std::max<std::size_t>(1, len)));
      events_sig[s0 + i] += amp * env * std::sin(phase);
    }
    clip.events.push_back({onset, onset + dur});
  }

  // Shared low-frequency background: one-pole filtered white noise.
  std::vector<double> background(n, 0.0);
  double state = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    state = 0.98 * state + 0.02 * rng.gaussian();
    background[i] = cfg.background_level * state * 50.0;  // undo 1-pole loss
  }

  const double mic_noise = std::pow(10.0, -cfg.snr_mic / 20.0);
  const double accel_noise = std::pow(10.0, -cfg.snr_accel / 20.0);

  std::vector<double> mic(n), shared(n);
  for (std::size_t i = 0; i < n; ++i) {
    shared[i] = events_sig[i] + background[i];
    mic[i] = shared[i] + mic_noise * rng.gaussian();
  }
  std::vector<double> accel =
      cfg.cross_map == SynthConfig::CrossMap::FilteredCopy
          ? detail::lowpass_fir(mic, 1000.0, cfg.sample_rate)
          : detail::lowpass_fir(shared, 1000.0, cfg.sample_rate);
  for (std::size_t i = 0; i < n; ++i) accel[i] += accel_noise * rng.gaussian();

  // Quantize to f32 so an exported WAV round-trips bit-exactly.
  detail::quantize_f32(mic);
  detail::quantize_f32(accel);

  clip.mic = {std::move(mic), cfg.sample_rate, ChannelId::Microphone};
  clip.accel = {std::move(accel), cfg.sample_rate, ChannelId::AccelMerged};
  return clip;
}

struct SynthResult {
  DatasetSplit split;
  // Ground-truth events per clip id; identical timing in both views.
  std::map<std::string, std::vector<EventInterval>> events;
  // Ground-truth frame tracks for every clip (labeled and unlabeled).
  std::map<std::string, FrameTrack> truth;
};

inline std::string synth_clip_id(int index) {
  return cat("clip_", index < 100 ? (index < 10 ? "00" : "0") : "", index);
}

inline SynthResult synthesize(const SynthConfig& cfg, const StftConfig& stft) {
  cfg.validate();
  stft.validate();

  struct PerClip {
    Spectrogram mic, accel;
    FrameTrack truth;
    std::vector<EventInterval> events;
  };
  std::vector<PerClip> clips(static_cast<std::size_t>(cfg.n_clips));
  parallel_for(clips.size(), [&](std::size_t i) {
    const SynthClip raw = synthesize_clip(cfg, static_cast<int>(i));
    const std::string id = synth_clip_id(static_cast<int>(i));
    PerClip& out = clips[i];
    out.mic = power_spectrogram(raw.mic, stft);
    out.mic.clip_id = id;
    out.accel = power_spectrogram(raw.accel, stft);
    out.accel.clip_id = id;
    out.truth = rasterize_annotations(raw.events, out.mic.frames(), out.mic.frame_hop);
    out.truth.clip_id = id;
    out.events = raw.events;
  });

  SynthResult result;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::string id = synth_clip_id(static_cast<int>(i));
    result.events[id] = clips[i].events;
    result.truth[id] = clips[i].truth;
    if (static_cast<int>(i) < cfg.n_labeled) {
      result.split.labeled.push_back({id, std::move(clips[i].mic),
                                      std::move(clips[i].accel),
                                      std::move(clips[i].truth)});
    } else {
      result.split.unlabeled.push_back(
          {id, std::move(clips[i].mic), std::move(clips[i].accel)});
    }
  }
  result.split.validate();
  return result;
}

// Writes a synthetic dataset in the ingest layout: one 3-channel WAV per
// clip (mic, accel, accel), a manifest, and the annotation CSV.
inline void export_synth_dataset(const SynthConfig& cfg, const std::string& dir) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["annotations"] = "labels.csv";
  manifest["files"] = nlohmann::json::array();

  std::string csv = "clip_id,channel,onset_sec,offset_sec\n";
  for (int i = 0; i < cfg.n_clips; ++i) {
    const SynthClip clip = synthesize_clip(cfg, i);
    const std::string id = synth_clip_id(i);
    const std::string wav_name = id + ".wav";
    write_wav((std::filesystem::path(dir) / wav_name).string(),
              {clip.mic.samples, clip.accel.samples, clip.accel.samples},
              cfg.sample_rate);
    manifest["files"].push_back(
        {{"path", wav_name},
         {"id", id},
         {"role", i < cfg.n_labeled ? "labeled" : "unlabeled"},
         {"mic_channel", 0},
         {"accel_channels", {1, 2}}});
    if (i < cfg.n_labeled)
      for (const auto& ev : clip.events)
        csv += cat(id, ",male,", ev.onset, ",", ev.offset, "\n");
  }

  std::ofstream mf((std::filesystem::path(dir) / "manifest.json").string(),
                   std::ios::trunc);
  mf << manifest.dump(2) << "\n";
  std::ofstream cf((std::filesystem::path(dir) / "labels.csv").string(),
                   std::ios::trunc);
  cf << csv;
}

// Seeded shuffle, then partition; both sides non-empty.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_train_test(
    std::vector<T> clips, double test_fraction, std::uint64_t seed) {
  if (clips.size() < 2)
    throw validation_error(cat("split_train_test: need >= 2 clips, got ",
                               clips.size()));
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw config_error(cat("split_train_test: test_fraction must lie in (0,1), got ",
                           test_fraction));
  Rng rng(derive_seed(seed, "train-test-split"));
  rng.shuffle(clips);
  auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(clips.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, clips.size() - 1);

  std::pair<std::vector<T>, std::vector<T>> out;
  out.second.assign(std::make_move_iterator(clips.begin()),
                    std::make_move_iterator(clips.begin() + static_cast<std::ptrdiff_t>(n_test)));
  out.first.assign(std::make_move_iterator(clips.begin() + static_cast<std::ptrdiff_t>(n_test)),
                   std::make_move_iterator(clips.end()));
  return out;
}

}  // namespace bdcca
