#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bdcca {

// Error taxonomy. Structural problems (shape/length mismatch) and invalid
// configuration are kept apart from numerical failures so callers can react
// differently (fix the config vs. raise the regularizer).
struct error : std::runtime_error {
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : error {
  explicit config_error(const std::string& msg) : error(msg) {}
};

struct shape_error : error {
  explicit shape_error(const std::string& msg) : error(msg) {}
};

struct validation_error : error {
  explicit validation_error(const std::string& msg) : error(msg) {}
};

struct singularity_error : error {
  explicit singularity_error(const std::string& msg) : error(msg) {}
};

struct io_error : error {
  explicit io_error(const std::string& msg) : error(msg) {}
};

namespace detail {

inline void cat_impl(std::ostringstream&) {}

template <typename T, typename... Rest>
void cat_impl(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  cat_impl(os, rest...);
}

}  // namespace detail

// String concatenation for error messages: cat("got ", n, " samples").
template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  detail::cat_impl(os, args...);
  return os.str();
}

// Warnings go to stderr; they never alter results.
inline void warn(const std::string& msg) {
  std::fputs(("warning: " + msg + "\n").c_str(), stderr);
}

// Runs fn(i) for i in [0, n) across a few threads. Each index is processed
// exactly once and writes only to its own slot, so results do not depend on
// the thread count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         unsigned max_threads = 0) {
  unsigned hw = max_threads ? max_threads : std::thread::hardware_concurrency();
  if (hw <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  unsigned n_threads = static_cast<unsigned>(std::min<std::size_t>(hw, n));
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (unsigned w = 0; w < n_threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += n_threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace bdcca
