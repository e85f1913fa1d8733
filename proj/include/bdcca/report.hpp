#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdcca/classifier.hpp"
#include "bdcca/common.hpp"
#include "bdcca/config.hpp"
#include "bdcca/dcca.hpp"
#include "bdcca/eval.hpp"

namespace bdcca {

struct StageInfo {
  std::string name;
  double seconds = 0.0;
  std::string cache_key;
  bool cached = false;
};

struct RunResult {
  Mode mode = Mode::Bdcca;
  std::uint64_t seed = 0;
  SegmentMetrics metrics;  // micro-average over the test split
  std::vector<std::pair<std::string, SegmentMetrics>> per_clip;
  std::vector<std::pair<std::string, FrameTrack>> predictions;  // test split
  std::vector<StageInfo> stages;
  double dcca_probe_initial = 0.0;  // 0 for the DCRNN modes
  double dcca_probe_final = 0.0;
};

inline nlohmann::json metrics_to_json(const SegmentMetrics& m,
                                      std::size_t n_clips) {
  return {{"precision", m.precision}, {"recall", m.recall},   {"f1", m.f1},
          {"tp", m.tp},               {"fp", m.fp},           {"fn", m.fn},
          {"segment_length_sec", m.segment_length},
          {"n_clips", n_clips}};
}

inline SegmentMetrics metrics_from_json(const nlohmann::json& j) {
  SegmentMetrics m;
  m.tp = j.at("tp").get<std::int64_t>();
  m.fp = j.at("fp").get<std::int64_t>();
  m.fn = j.at("fn").get<std::int64_t>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.segment_length = j.at("segment_length_sec").get<double>();
  return m;
}

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("report: cannot open " + p.string());
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
}

inline std::string csv_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// Deterministic metrics file: config echo, seeds, one row per executed mode.
// Timings deliberately live elsewhere so reruns are byte-identical.
inline std::string render_metrics_json(const PipelineConfig& cfg,
                                       const std::vector<RunResult>& results) {
  if (results.empty()) throw validation_error("report: no results");
  nlohmann::json j;
  j["config"] = config_to_json(cfg);
  j["results"] = nlohmann::json::object();
  for (const auto& r : results) {
    nlohmann::json row = metrics_to_json(r.metrics, r.per_clip.size());
    row["seed"] = r.seed;
    j["results"][mode_name(r.mode)] = row;
  }
  return j.dump(2) + "\n";
}

inline std::string render_per_clip_csv(const std::vector<RunResult>& results) {
  std::string csv = "mode,clip_id,tp,fp,fn,precision,recall,f1\n";
  for (const auto& r : results)
    for (const auto& [id, m] : r.per_clip)
      csv += cat(mode_name(r.mode), ",", id, ",", m.tp, ",", m.fp, ",", m.fn,
                 ",", detail::csv_number(m.precision), ",",
                 detail::csv_number(m.recall), ",", detail::csv_number(m.f1),
                 "\n");
  return csv;
}

inline std::string render_timings_csv(const std::vector<RunResult>& results) {
  std::string csv = "mode,stage,seconds,cached,cache_key\n";
  for (const auto& r : results)
    for (const auto& s : r.stages)
      csv += cat(mode_name(r.mode), ",", s.name, ",", detail::csv_number(s.seconds),
                 ",", s.cached ? 1 : 0, ",", s.cache_key, "\n");
  return csv;
}

inline std::string render_step_log_csv(const std::vector<DccaStepLog>& log) {
  std::string csv = "step,loss\n";
  for (const auto& e : log) csv += cat(e.step, ",", detail::csv_number(e.loss), "\n");
  return csv;
}

inline std::string render_epoch_log_csv(const std::vector<EpochLog>& log) {
  std::string csv = "epoch,bce\n";
  for (const auto& e : log) csv += cat(e.epoch, ",", detail::csv_number(e.bce), "\n");
  return csv;
}

inline std::string render_prediction_csv(
    const std::vector<std::pair<std::string, FrameTrack>>& predictions) {
  std::string csv = "clip_id,frame,probability\n";
  for (const auto& [id, track] : predictions)
    for (std::size_t f = 0; f < track.values.size(); ++f)
      csv += cat(id, ",", f, ",", detail::csv_number(track.values[f]), "\n");
  return csv;
}

// Stacked figure, binary PPM: log-scaled spectrogram on top, ground truth
// bar in the middle, prediction bar at the bottom.
inline void write_clip_figure(const std::filesystem::path& path,
                              const Spectrogram& spec, const FrameTrack& truth,
                              const FrameTrack& prediction) {
  const int t = static_cast<int>(spec.frames());
  const int f = static_cast<int>(spec.freq_bins());
  const int bar = std::max(6, f / 8), gap = 2;
  const int height = f + gap + bar + gap + bar;

  Eigen::ArrayXXd logv = (1.0 + spec.values.array()).log();
  const double lo = logv.minCoeff(), hi = std::max(logv.maxCoeff(), lo + 1e-12);

  std::string body;
  body.reserve(static_cast<std::size_t>(height) * t * 3);
  auto put = [&body](unsigned char r, unsigned char g, unsigned char b) {
    body.push_back(static_cast<char>(r));
    body.push_back(static_cast<char>(g));
    body.push_back(static_cast<char>(b));
  };
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < t; ++col) {
      if (row < f) {
        // Highest frequency on top.
        const double v = (logv(f - 1 - row, col) - lo) / (hi - lo);
        const auto g = static_cast<unsigned char>(255.0 * v);
        put(g, g, static_cast<unsigned char>(128 + g / 2));
      } else if (row < f + gap || (row >= f + gap + bar && row < f + gap + bar + gap)) {
        put(0, 0, 0);
      } else if (row < f + gap + bar) {
        const bool on = truth.values[static_cast<std::size_t>(col)] > 0.0;
        on ? put(40, 200, 40) : put(24, 24, 24);
      } else {
        const bool on = prediction.values[static_cast<std::size_t>(col)] > 0.0;
        on ? put(220, 60, 60) : put(24, 24, 24);
      }
    }
  }
  detail::write_file(path, cat("P6\n", t, " ", height, "\n255\n") + body);
}

}  // namespace bdcca
