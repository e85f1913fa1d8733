#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bdcca/common.hpp"
#include "bdcca/dsp.hpp"

namespace bdcca {

// Segment-based detection scores: the time axis is cut into fixed-length
// segments (final partial segment included) and a segment counts as active
// when any frame inside it is active.
struct SegmentMetrics {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double segment_length = 1.0;  // seconds
};

namespace detail {

inline SegmentMetrics metrics_from_counts(std::int64_t tp, std::int64_t fp,
                                          std::int64_t fn, double seg_len) {
  SegmentMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.segment_length = seg_len;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

}  // namespace detail

// Frame j belongs to segment floor(j * hop / segment_length); a frame on the
// boundary belongs to the later segment only.
inline SegmentMetrics segment_scores(const FrameTrack& reference,
                                     const FrameTrack& prediction,
                                     double frame_hop, double segment_length) {
  if (reference.values.size() != prediction.values.size())
    throw shape_error(cat("segment_scores: track lengths differ, ",
                          reference.values.size(), " vs ",
                          prediction.values.size()));
  if (reference.kind != FrameTrack::Kind::BinaryLabel ||
      prediction.kind != FrameTrack::Kind::BinaryLabel)
    throw validation_error("segment_scores: both tracks must be binary");
  reference.validate();
  prediction.validate();
  if (frame_hop <= 0.0 || segment_length <= 0.0)
    throw config_error(cat("segment_scores: bad hop/segment_length: ",
                           frame_hop, ", ", segment_length));

  const std::size_t t = reference.values.size();
  const std::size_t n_segments =
      t == 0 ? 0
             : static_cast<std::size_t>(std::floor(
                   static_cast<double>(t - 1) * frame_hop / segment_length)) +
                   1;
  std::vector<bool> ref_active(n_segments, false), pred_active(n_segments, false);
  for (std::size_t j = 0; j < t; ++j) {
    const auto seg = static_cast<std::size_t>(
        std::floor(static_cast<double>(j) * frame_hop / segment_length));
    if (reference.values[j] > 0.0) ref_active[seg] = true;
    if (prediction.values[j] > 0.0) pred_active[seg] = true;
  }

  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t s = 0; s < n_segments; ++s) {
    if (ref_active[s] && pred_active[s]) ++tp;
    else if (pred_active[s]) ++fp;
    else if (ref_active[s]) ++fn;
  }
  return detail::metrics_from_counts(tp, fp, fn, segment_length);
}

// Micro-average: pool the error counts across clips, then derive the rates.
inline SegmentMetrics aggregate(const std::vector<SegmentMetrics>& per_clip) {
  if (per_clip.empty()) throw validation_error("aggregate: no clips");
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (const auto& m : per_clip) {
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
  }
  return detail::metrics_from_counts(tp, fp, fn, per_clip.front().segment_length);
}

}  // namespace bdcca
