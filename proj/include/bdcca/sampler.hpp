#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "bdcca/augment.hpp"
#include "bdcca/classifier.hpp"
#include "bdcca/common.hpp"
#include "bdcca/dsp.hpp"
#include "bdcca/rng.hpp"

namespace bdcca {

// One clip's predicted event occupancy. Deliberately carries no frame track:
// pseudo-labels exist only long enough to be counted, so they can never leak
// into downstream training as ground truth.
struct OccupancyRecord {
  std::string clip_id;
  std::int64_t positive_frames = 0;  // m
  int bin = 0;                       // n, in [1, B]
};

struct BinningConfig {
  int bins = 10;  // B; 1 degenerates to plain uniform sampling
  int batch_size = 8;
  int min_bin_population = 8;
  AugmentConfig augment;

  void validate() const {
    if (bins < 1) throw config_error("binning: bins must be >= 1");
    if (batch_size < 1) throw config_error("binning: batch_size must be >= 1");
    if (min_bin_population < 1)
      throw config_error("binning: min_bin_population must be >= 1");
  }
};

// m = sum of a binary frame track.
inline std::int64_t count_positives(const FrameTrack& track) {
  if (track.kind != FrameTrack::Kind::BinaryLabel)
    throw validation_error(cat("count_positives: track '", track.clip_id,
                               "' is not binary"));
  track.validate();
  std::int64_t m = 0;
  for (double v : track.values) m += v > 0.0 ? 1 : 0;
  return m;
}

// Bin index n = ceil(m * B / M) in exact integer arithmetic, with the m = 0
// gap folded into bin 1 (the low-occupancy bin).
inline int assign_bin(std::int64_t m, std::int64_t big_m, int bins) {
  if (bins < 1) throw config_error(cat("assign_bin: bins must be >= 1, got ", bins));
  if (big_m < 1) throw config_error(cat("assign_bin: M must be >= 1, got ", big_m));
  if (m < 0) throw validation_error(cat("assign_bin: negative m ", m));
  if (m > big_m)
    throw validation_error(cat("assign_bin: m=", m, " exceeds M=", big_m,
                               " (stale index; rebuild)"));
  if (m == 0) return 1;
  return static_cast<int>((m * bins + big_m - 1) / big_m);
}

struct OccupancyIndex {
  std::vector<OccupancyRecord> records;
  std::int64_t max_positive_frames = 0;  // M
  int bins = 0;                          // B used for the assignment
};

using FramePredictor = std::function<FrameTrack(const Spectrogram&)>;

// Predict on each accelerometer spectrogram, binarize, count, bin. The
// predictor is pure per clip, so clips are processed in parallel.
inline OccupancyIndex build_index(const std::vector<const Spectrogram*>& accel,
                                  const FramePredictor& predictor,
                                  const DetectionConfig& det,
                                  const BinningConfig& cfg) {
  cfg.validate();
  det.validate();
  if (accel.empty()) throw validation_error("build_index: empty unlabeled set");

  OccupancyIndex index;
  index.bins = cfg.bins;
  index.records.resize(accel.size());
  parallel_for(accel.size(), [&](std::size_t i) {
    const FrameTrack pred = binarize(predictor(*accel[i]), det);
    index.records[i].clip_id = accel[i]->clip_id;
    index.records[i].positive_frames = count_positives(pred);
  });

  for (const auto& r : index.records)
    index.max_positive_frames =
        std::max(index.max_positive_frames, r.positive_frames);
  if (index.max_positive_frames == 0)
    throw validation_error(
        "build_index: no positive frames predicted anywhere; review the "
        "detection threshold and the bootstrap model");
  for (auto& r : index.records)
    r.bin = assign_bin(r.positive_frames, index.max_positive_frames, cfg.bins);
  return index;
}

inline OccupancyIndex build_index(const std::vector<const Spectrogram*>& accel,
                                  const Classifier& bootstrap,
                                  const DetectionConfig& det,
                                  const BinningConfig& cfg) {
  // Inference runs on a private copy per clip, keeping the shared model
  // untouched across worker threads.
  return build_index(
      accel,
      [&bootstrap](const Spectrogram& s) {
        Classifier local(bootstrap);
        FrameTrack track = predict_frames(local, s.values);
        track.clip_id = s.clip_id;
        return track;
      },
      det, cfg);
}

// A trivial index for plain uniform sampling: one bin holding every clip.
inline OccupancyIndex uniform_index(const std::vector<const Spectrogram*>& accel) {
  OccupancyIndex index;
  index.bins = 1;
  index.max_positive_frames = 1;
  for (const auto* s : accel) index.records.push_back({s->clip_id, 0, 1});
  return index;
}

struct BatchItem {
  const Spectrogram* mic = nullptr;
  const Spectrogram* accel = nullptr;
  std::string clip_id;
  int bin = 0;
  bool augmented = false;
};

struct BalancedBatch {
  std::vector<BatchItem> items;
};

// Draws batches with equalized bin mass: a bin uniformly at random, then a
// member uniformly within it. Bins below min_bin_population are topped up
// once, at construction, with masking-augmented copies of their members
// (each view augmented independently).
class BatchSampler {
 public:
  BatchSampler(const OccupancyIndex& index,
               const std::vector<const Spectrogram*>& mic,
               const std::vector<const Spectrogram*>& accel,
               const BinningConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), bins_(static_cast<std::size_t>(index.bins)), draw_rng_(seed) {
    cfg.validate();
    std::unordered_map<std::string, const Spectrogram*> mic_by_id, accel_by_id;
    for (const auto* s : mic) mic_by_id[s->clip_id] = s;
    for (const auto* s : accel) accel_by_id[s->clip_id] = s;

    for (const auto& rec : index.records) {
      auto mi = mic_by_id.find(rec.clip_id);
      auto ai = accel_by_id.find(rec.clip_id);
      if (mi == mic_by_id.end() || ai == accel_by_id.end())
        throw validation_error(cat("sampler: clip '", rec.clip_id,
                                   "' missing a synchronized channel"));
      if (rec.bin < 1 || rec.bin > index.bins)
        throw validation_error(cat("sampler: bin ", rec.bin, " outside [1, ",
                                   index.bins, "]"));
      bins_[static_cast<std::size_t>(rec.bin - 1)].push_back(
          {mi->second, ai->second, rec.clip_id, rec.bin, false});
    }

    std::string empty;
    for (std::size_t b = 0; b < bins_.size(); ++b)
      if (bins_[b].empty()) empty += cat(b + 1, " ");
    if (!empty.empty())
      throw config_error(cat("sampler: empty bins with nothing to augment: ",
                             empty, "- lower the bin count or add data"));

    Rng fill_rng(derive_seed(seed, "bin-fill"));
    for (std::size_t b = 0; b < bins_.size(); ++b) {
      auto& pool = bins_[b];
      const std::size_t base = pool.size();
      std::size_t cursor = 0;
      while (pool.size() < static_cast<std::size_t>(cfg.min_bin_population)) {
        const BatchItem& src = pool[cursor % base];
        ++cursor;
        owned_.push_back(spec_augment(*src.accel, cfg.augment, fill_rng));
        const Spectrogram* aug_accel = &owned_.back();
        owned_.push_back(spec_augment(*src.mic, cfg.augment, fill_rng));
        const Spectrogram* aug_mic = &owned_.back();
        pool.push_back({aug_mic, aug_accel, src.clip_id, src.bin, true});
      }
    }
  }

  // One balanced batch; with a single bin this consumes exactly one uniform
  // draw per item, i.e. the plain uniform sampler.
  BalancedBatch next() {
    BalancedBatch batch;
    batch.items.reserve(static_cast<std::size_t>(cfg_.batch_size));
    for (int i = 0; i < cfg_.batch_size; ++i) {
      const std::size_t b =
          bins_.size() == 1
              ? 0
              : static_cast<std::size_t>(draw_rng_.uniform_below(bins_.size()));
      const auto& pool = bins_[b];
      batch.items.push_back(
          pool[static_cast<std::size_t>(draw_rng_.uniform_below(pool.size()))]);
    }
    return batch;
  }

  std::size_t bin_population(std::size_t b) const { return bins_[b].size(); }
  std::size_t bin_count() const { return bins_.size(); }

 private:
  BinningConfig cfg_;
  std::vector<std::vector<BatchItem>> bins_;
  std::deque<Spectrogram> owned_;  // augmented copies; stable addresses
  Rng draw_rng_;
};

// Persists an index as CSV `clip_id,m,bin`.
inline std::string index_to_csv(const OccupancyIndex& index) {
  std::string out = "clip_id,m,bin\n";
  for (const auto& r : index.records)
    out += cat(r.clip_id, ",", r.positive_frames, ",", r.bin, "\n");
  return out;
}

inline OccupancyIndex index_from_csv(const std::string& csv, int bins) {
  OccupancyIndex index;
  index.bins = bins;
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "clip_id,m,bin")
    throw io_error("index_from_csv: bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw io_error("index_from_csv: malformed row: " + line);
    OccupancyRecord rec;
    rec.clip_id = line.substr(0, c1);
    rec.positive_frames = std::stoll(line.substr(c1 + 1, c2 - c1 - 1));
    rec.bin = std::stoi(line.substr(c2 + 1));
    index.max_positive_frames =
        std::max(index.max_positive_frames, rec.positive_frames);
    index.records.push_back(std::move(rec));
  }
  return index;
}

}  // namespace bdcca
