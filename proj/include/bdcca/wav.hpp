#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bdcca/common.hpp"

namespace bdcca {

// Minimal RIFF/WAVE codec: PCM 16/32-bit integer and IEEE float32, any
// channel count >= 1. Samples are normalized to [-1, 1] doubles.
struct WavData {
  int sample_rate = 0;
  std::vector<std::vector<double>> channels;  // channels[c][i]

  std::size_t frames() const { return channels.empty() ? 0 : channels[0].size(); }
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void append_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace detail

inline WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("read_wav: cannot open " + path);
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw io_error("read_wav: not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, n_channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::uint32_t chunk_size = detail::read_u32(hdr + 4);
    const unsigned char* body = hdr + 8;
    if (pos + 8 + chunk_size > bytes.size())
      chunk_size = static_cast<std::uint32_t>(bytes.size() - pos - 8);
    if (std::memcmp(hdr, "fmt ", 4) == 0 && chunk_size >= 16) {
      format = detail::read_u16(body);
      n_channels = detail::read_u16(body + 2);
      rate = detail::read_u32(body + 4);
      bits = detail::read_u16(body + 14);
      if (format == 0xFFFE && chunk_size >= 40)  // WAVE_FORMAT_EXTENSIBLE
        format = detail::read_u16(body + 24);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_size = chunk_size;
    }
    pos += 8 + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }

  if (n_channels == 0 || rate == 0 || data == nullptr)
    throw io_error("read_wav: missing fmt/data chunk in " + path);
  const bool is_float = format == 3;
  const bool is_pcm = format == 1;
  if (!is_float && !is_pcm)
    throw io_error(cat("read_wav: unsupported format tag ", format, " in ", path));
  if ((is_float && bits != 32) || (is_pcm && bits != 16 && bits != 32))
    throw io_error(cat("read_wav: unsupported bit depth ", bits, " in ", path));

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t stride = bytes_per_sample * n_channels;
  const std::size_t n_frames = data_size / stride;

  WavData out;
  out.sample_rate = static_cast<int>(rate);
  out.channels.assign(n_channels, std::vector<double>(n_frames));
  for (std::size_t f = 0; f < n_frames; ++f) {
    for (std::uint16_t c = 0; c < n_channels; ++c) {
      const unsigned char* p = data + f * stride + c * bytes_per_sample;
      double v;
      if (is_float) {
        float x;
        std::memcpy(&x, p, 4);
        v = static_cast<double>(x);
      } else if (bits == 16) {
        std::int16_t x;
        std::memcpy(&x, p, 2);
        v = static_cast<double>(x) / 32768.0;
      } else {
        std::int32_t x;
        std::memcpy(&x, p, 4);
        v = static_cast<double>(x) / 2147483648.0;
      }
      out.channels[c][f] = v;
    }
  }
  return out;
}

// Writes interleaved IEEE float32 WAV.
inline void write_wav(const std::string& path,
                      const std::vector<std::vector<double>>& channels,
                      int sample_rate) {
  if (channels.empty() || channels[0].empty())
    throw validation_error("write_wav: no samples");
  const std::size_t n_frames = channels[0].size();
  for (const auto& c : channels)
    if (c.size() != n_frames)
      throw shape_error(cat("write_wav: ragged channels, ", c.size(), " vs ",
                            n_frames));
  const auto n_channels = static_cast<std::uint16_t>(channels.size());
  const std::uint32_t data_size =
      static_cast<std::uint32_t>(n_frames * n_channels * 4);

  std::string s;
  s.reserve(44 + data_size);
  s.append("RIFF");
  detail::append_u32(s, 36 + data_size);
  s.append("WAVE");
  s.append("fmt ");
  detail::append_u32(s, 16);
  detail::append_u16(s, 3);  // IEEE float
  detail::append_u16(s, n_channels);
  detail::append_u32(s, static_cast<std::uint32_t>(sample_rate));
  detail::append_u32(s, static_cast<std::uint32_t>(sample_rate) * n_channels * 4);
  detail::append_u16(s, static_cast<std::uint16_t>(n_channels * 4));
  detail::append_u16(s, 32);
  s.append("data");
  detail::append_u32(s, data_size);
  for (std::size_t f = 0; f < n_frames; ++f) {
    for (std::uint16_t c = 0; c < n_channels; ++c) {
      float x = static_cast<float>(channels[c][f]);
      char b[4];
      std::memcpy(b, &x, 4);
      s.append(b, 4);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("write_wav: cannot open " + path);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!out) throw io_error("write_wav: short write to " + path);
}

}  // namespace bdcca
