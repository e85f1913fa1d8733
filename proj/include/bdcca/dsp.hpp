#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "bdcca/common.hpp"

namespace bdcca {

enum class ChannelId { Microphone, AccelMale, AccelFemale, AccelMerged };

inline const char* channel_name(ChannelId c) {
  switch (c) {
    case ChannelId::Microphone: return "microphone";
    case ChannelId::AccelMale: return "accel_male";
    case ChannelId::AccelFemale: return "accel_female";
    case ChannelId::AccelMerged: return "accel_merged";
  }
  return "?";
}

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 24000;
  ChannelId channel_id = ChannelId::Microphone;
};

// STFT configuration. The defaults give a (257, 375) power spectrogram for a
// 4 s clip at 24 kHz; frame count follows the framing rule documented at
// power_spectrogram().
struct StftConfig {
  int n_fft = 512;
  int win_length = 512;
  int hop_length = 256;
  enum class Window { Hann } window = Window::Hann;
  double clip_seconds = 4.0;

  void validate() const {
    if (!(0 < hop_length && hop_length <= win_length && win_length <= n_fft))
      throw config_error(cat("stft: need 0 < hop <= win <= n_fft, got hop=",
                             hop_length, " win=", win_length, " n_fft=", n_fft));
    if (n_fft & (n_fft - 1))
      throw config_error(cat("stft: n_fft must be a power of two, got ", n_fft));
    if (clip_seconds <= 0.0)
      throw config_error("stft: clip_seconds must be positive");
  }

  int freq_bins() const { return n_fft / 2 + 1; }
};

// Power spectrogram, one column per frame, all values >= 0.
struct Spectrogram {
  Eigen::MatrixXd values;  // freq_bins x frames
  double frame_hop = 0.0;  // seconds between successive frames
  std::string clip_id;
  ChannelId channel_id = ChannelId::Microphone;

  Eigen::Index freq_bins() const { return values.rows(); }
  Eigen::Index frames() const { return values.cols(); }
};

// Per-frame labels (binary) or detection probabilities, aligned with the
// columns of a Spectrogram.
struct FrameTrack {
  enum class Kind { BinaryLabel, Probability };

  std::vector<double> values;
  Kind kind = Kind::BinaryLabel;
  std::string clip_id;

  void validate() const {
    for (double v : values) {
      if (kind == Kind::BinaryLabel) {
        if (v != 0.0 && v != 1.0)
          throw validation_error(cat("frame track '", clip_id,
                                     "': binary track holds value ", v));
      } else if (!(v >= 0.0 && v <= 1.0)) {
        throw validation_error(cat("frame track '", clip_id,
                                   "': probability out of [0,1]: ", v));
      }
    }
  }
};

struct EventInterval {
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds, exclusive
};

// Averages the two accelerometer channels sample by sample.
inline Waveform merge_accelerometers(const Waveform& a, const Waveform& b) {
  auto is_accel = [](ChannelId c) {
    return c == ChannelId::AccelMale || c == ChannelId::AccelFemale;
  };
  if (!is_accel(a.channel_id) || !is_accel(b.channel_id))
    throw validation_error(cat("merge_accelerometers: expected accelerometer "
                               "channels, got ",
                               channel_name(a.channel_id), " and ",
                               channel_name(b.channel_id)));
  if (a.samples.size() != b.samples.size())
    throw shape_error(cat("merge_accelerometers: length mismatch, ",
                          a.samples.size(), " vs ", b.samples.size()));
  if (a.sample_rate != b.sample_rate)
    throw shape_error(cat("merge_accelerometers: sample rate mismatch, ",
                          a.sample_rate, " vs ", b.sample_rate));
  Waveform out;
  out.sample_rate = a.sample_rate;
  out.channel_id = ChannelId::AccelMerged;
  out.samples.resize(a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    out.samples[i] = 0.5 * (a.samples[i] + b.samples[i]);
  return out;
}

namespace detail {

// Iterative radix-2 FFT, in place. n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = x[i + k];
        std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * M_PI * i / static_cast<double>(n)));
  return w;
}

}  // namespace detail

// Number of STFT frames for a signal of the given length. Frame j covers
// samples [j*hop, j*hop + win) of the tail-zero-padded signal; a frame is
// emitted for every start below len, i.e. t = ceil(len / hop). With the
// default config a 4 s clip at 24 kHz yields exactly 375 frames.
inline Eigen::Index stft_frame_count(std::size_t len, const StftConfig& cfg) {
  cfg.validate();
  if (len < static_cast<std::size_t>(cfg.win_length))
    throw shape_error(cat("power_spectrogram: clip of ", len,
                          " samples is shorter than one window (",
                          cfg.win_length, ")"));
  const std::size_t hop = static_cast<std::size_t>(cfg.hop_length);
  return static_cast<Eigen::Index>((len + hop - 1) / hop);
}

// Squared-magnitude STFT with a Hann window. No amplitude normalization and
// no log compression here; values are raw |STFT|^2.
inline Spectrogram power_spectrogram(const Waveform& w, const StftConfig& cfg) {
  const Eigen::Index t = stft_frame_count(w.samples.size(), cfg);
  for (double s : w.samples)
    if (!std::isfinite(s))
      throw validation_error("power_spectrogram: non-finite sample in input");

  const int n_fft = cfg.n_fft;
  const int bins = cfg.freq_bins();
  const std::vector<double> window = detail::hann_window(cfg.win_length);

  Spectrogram out;
  out.values.resize(bins, t);
  out.frame_hop = static_cast<double>(cfg.hop_length) / w.sample_rate;
  out.channel_id = w.channel_id;

  std::vector<std::complex<double>> buf(static_cast<std::size_t>(n_fft));
  const std::size_t len = w.samples.size();
  for (Eigen::Index j = 0; j < t; ++j) {
    const std::size_t start = static_cast<std::size_t>(j) *
                              static_cast<std::size_t>(cfg.hop_length);
    for (int i = 0; i < n_fft; ++i) {
      const std::size_t idx = start + static_cast<std::size_t>(i);
      double s = (i < cfg.win_length && idx < len)
                     ? w.samples[idx] * window[static_cast<std::size_t>(i)]
                     : 0.0;
      buf[static_cast<std::size_t>(i)] = {s, 0.0};
    }
    detail::fft_radix2(buf);
    for (int b = 0; b < bins; ++b)
      out.values(b, j) = std::norm(buf[static_cast<std::size_t>(b)]);
  }
  return out;
}

// Marks frame j positive iff its span [j*hop, (j+1)*hop) overlaps any event
// interval by a positive amount. Events are clipped to the frame grid.
inline FrameTrack rasterize_annotations(const std::vector<EventInterval>& events,
                                        Eigen::Index frames, double frame_hop) {
  if (frames < 0 || frame_hop <= 0.0)
    throw validation_error(cat("rasterize_annotations: bad grid, frames=",
                               frames, " hop=", frame_hop));
  FrameTrack track;
  track.kind = FrameTrack::Kind::BinaryLabel;
  track.values.assign(static_cast<std::size_t>(frames), 0.0);
  const double total = static_cast<double>(frames) * frame_hop;
  for (const auto& ev : events) {
    if (ev.onset < 0.0)
      throw validation_error(cat("rasterize_annotations: negative onset ",
                                 ev.onset));
    if (ev.offset <= ev.onset)
      throw validation_error(cat("rasterize_annotations: offset ", ev.offset,
                                 " <= onset ", ev.onset));
    const double on = std::min(ev.onset, total);
    const double off = std::min(ev.offset, total);
    if (off <= on) continue;
    auto lo = static_cast<Eigen::Index>(std::floor(on / frame_hop));
    auto hi = static_cast<Eigen::Index>(std::ceil(off / frame_hop));
    lo = std::max<Eigen::Index>(lo, 0);
    hi = std::min<Eigen::Index>(hi, frames);
    for (Eigen::Index j = lo; j < hi; ++j) {
      const double span_on = static_cast<double>(j) * frame_hop;
      const double span_off = span_on + frame_hop;
      if (std::min(off, span_off) - std::max(on, span_on) > 0.0)
        track.values[static_cast<std::size_t>(j)] = 1.0;
    }
  }
  return track;
}

}  // namespace bdcca
