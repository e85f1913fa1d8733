#pragma once

#include <vector>

#include "bdcca/common.hpp"
#include "bdcca/dsp.hpp"
#include "bdcca/rng.hpp"

namespace bdcca {

// SpecAugment-style masking. Time warping is deliberately absent: both views
// of a clip stay frame-synchronized, and each view is masked independently.
struct AugmentConfig {
  int num_freq_masks = 2;
  int max_freq_width = 24;  // bins
  int num_time_masks = 2;
  int max_time_width = 30;  // frames
  enum class Fill { Zero, SpectrogramMean } fill = Fill::Zero;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_freq_masks < 0 || num_time_masks < 0)
      throw config_error("augment: mask counts must be >= 0");
    if (max_freq_width < 0 || max_time_width < 0)
      throw config_error("augment: mask widths must be >= 0");
  }

  // Widths must stay strictly below the masked axis length.
  void validate_for(const Spectrogram& x) const {
    validate();
    if (num_freq_masks > 0 && max_freq_width >= x.freq_bins())
      throw config_error(cat("augment: max_freq_width ", max_freq_width,
                             " >= freq axis length ", x.freq_bins()));
    if (num_time_masks > 0 && max_time_width >= x.frames())
      throw config_error(cat("augment: max_time_width ", max_time_width,
                             " >= time axis length ", x.frames()));
  }
};

struct MaskSpan {
  enum class Axis { Frequency, Time } axis;
  int start = 0;
  int width = 0;
};

// Applies the configured masks. Draw order per mask: width in
// [0, max_width], then start in [0, axis - width]; frequency masks first.
// Everything outside the masks is bit-identical to the input.
inline Spectrogram spec_augment_with_masks(const Spectrogram& x,
                                           const AugmentConfig& cfg, Rng& rng,
                                           std::vector<MaskSpan>* masks_out) {
  cfg.validate_for(x);
  Spectrogram out = x;
  const double fill =
      cfg.fill == AugmentConfig::Fill::SpectrogramMean ? x.values.mean() : 0.0;
  if (masks_out) masks_out->clear();

  for (int i = 0; i < cfg.num_freq_masks; ++i) {
    const int w = static_cast<int>(rng.uniform_int(0, cfg.max_freq_width));
    const int f0 = static_cast<int>(
        rng.uniform_int(0, static_cast<int>(x.freq_bins()) - w));
    if (w > 0) out.values.middleRows(f0, w).setConstant(fill);
    if (masks_out) masks_out->push_back({MaskSpan::Axis::Frequency, f0, w});
  }
  for (int i = 0; i < cfg.num_time_masks; ++i) {
    const int w = static_cast<int>(rng.uniform_int(0, cfg.max_time_width));
    const int t0 =
        static_cast<int>(rng.uniform_int(0, static_cast<int>(x.frames()) - w));
    if (w > 0) out.values.middleCols(t0, w).setConstant(fill);
    if (masks_out) masks_out->push_back({MaskSpan::Axis::Time, t0, w});
  }
  return out;
}

inline Spectrogram spec_augment(const Spectrogram& x, const AugmentConfig& cfg,
                                Rng& rng) {
  return spec_augment_with_masks(x, cfg, rng, nullptr);
}

}  // namespace bdcca
