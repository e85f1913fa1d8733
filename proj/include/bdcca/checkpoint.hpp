#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "bdcca/common.hpp"
#include "bdcca/nn.hpp"

namespace bdcca {

// Checkpoint container, little-endian:
//   magic "BDCC" | version u32 | tensor records until EOF
// each record:
//   name_len u32 | name bytes | dtype u32 (1 = f32) | rank u32 |
//   dims u64[rank] | data f32[prod(dims)] row-major
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;

namespace detail {

template <typename T>
void put_le(std::string& s, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    s.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace detail

inline void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, const Eigen::MatrixXd*>>& tensors) {
  std::string s;
  s.append("BDCC");
  detail::put_le<std::uint32_t>(s, kCheckpointVersion);
  for (const auto& [name, mat] : tensors) {
    detail::put_le<std::uint32_t>(s, static_cast<std::uint32_t>(name.size()));
    s.append(name);
    detail::put_le<std::uint32_t>(s, kDtypeF32);
    detail::put_le<std::uint32_t>(s, 2);
    detail::put_le<std::uint64_t>(s, static_cast<std::uint64_t>(mat->rows()));
    detail::put_le<std::uint64_t>(s, static_cast<std::uint64_t>(mat->cols()));
    for (Eigen::Index i = 0; i < mat->rows(); ++i) {
      for (Eigen::Index j = 0; j < mat->cols(); ++j) {
        const float x = static_cast<float>((*mat)(i, j));
        char b[4];
        std::memcpy(b, &x, 4);
        s.append(b, 4);
      }
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("save_checkpoint: cannot open " + path);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!out) throw io_error("save_checkpoint: short write to " + path);
}

inline std::map<std::string, Eigen::MatrixXd> load_checkpoint(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("load_checkpoint: cannot open " + path);
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "BDCC", 4) != 0)
    throw io_error("load_checkpoint: bad magic in " + path);
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw io_error(cat("load_checkpoint: unsupported version ", version));

  std::map<std::string, Eigen::MatrixXd> out;
  std::size_t pos = 8;
  while (pos < bytes.size()) {
    auto need = [&](std::size_t n) {
      if (pos + n > bytes.size())
        throw io_error("load_checkpoint: truncated record in " + path);
    };
    need(4);
    const auto name_len = detail::get_le<std::uint32_t>(bytes.data() + pos);
    pos += 4;
    need(name_len);
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    need(8);
    const auto dtype = detail::get_le<std::uint32_t>(bytes.data() + pos);
    const auto rank = detail::get_le<std::uint32_t>(bytes.data() + pos + 4);
    pos += 8;
    if (dtype != kDtypeF32)
      throw io_error(cat("load_checkpoint: unsupported dtype ", dtype));
    if (rank != 2)
      throw io_error(cat("load_checkpoint: unsupported rank ", rank));
    need(16);
    const auto rows = detail::get_le<std::uint64_t>(bytes.data() + pos);
    const auto cols = detail::get_le<std::uint64_t>(bytes.data() + pos + 8);
    pos += 16;
    need(rows * cols * 4);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows),
                      static_cast<Eigen::Index>(cols));
    for (std::uint64_t i = 0; i < rows; ++i) {
      for (std::uint64_t j = 0; j < cols; ++j) {
        float x;
        std::memcpy(&x, bytes.data() + pos, 4);
        pos += 4;
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x;
      }
    }
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

// Convenience bridges to nn::TensorRef lists.
inline void save_tensors(const std::string& path,
                         const std::vector<nn::TensorRef>& refs) {
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> tensors;
  tensors.reserve(refs.size());
  for (const auto& r : refs) tensors.emplace_back(r.name, r.value);
  save_checkpoint(path, tensors);
}

inline void load_tensors(const std::string& path,
                         const std::vector<nn::TensorRef>& refs) {
  auto loaded = load_checkpoint(path);
  for (const auto& r : refs) {
    auto it = loaded.find(r.name);
    if (it == loaded.end())
      throw io_error(cat("load_tensors: '", r.name, "' missing from ", path));
    if (it->second.rows() != r.value->rows() ||
        it->second.cols() != r.value->cols())
      throw shape_error(cat("load_tensors: '", r.name, "' is ",
                            it->second.rows(), "x", it->second.cols(),
                            ", expected ", r.value->rows(), "x",
                            r.value->cols()));
    *r.value = it->second;
  }
}

}  // namespace bdcca
