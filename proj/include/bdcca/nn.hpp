#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "bdcca/common.hpp"
#include "bdcca/rng.hpp"

// Small dense building blocks shared by the two-view encoders and the
// frame-wise detector. Batches hold same-shaped clips concatenated along
// columns: data is (channels x clips*f*t) with column index
// clip*f*t + fi*t + ti. Purely temporal stacks use f == 1.
//
// Every layer owns its parameters and gradient buffers and caches whatever
// forward state its backward pass needs, so a network instance must not be
// shared across threads while training; read-only inference on a per-thread
// copy is safe.

namespace bdcca::nn {

struct FeatureBatch {
  Eigen::MatrixXd data;  // channels x (clips * f * t)
  int clips = 0;
  int f = 1;
  int t = 0;

  Eigen::Index cols_per_clip() const {
    return static_cast<Eigen::Index>(f) * t;
  }

  void check() const {
    if (data.cols() != static_cast<Eigen::Index>(clips) * f * t)
      throw shape_error(cat("feature batch: ", data.cols(), " columns vs ",
                            clips, " clips * ", f, " * ", t));
  }
};

// Named view of one parameter tensor and its gradient.
struct TensorRef {
  std::string name;
  Eigen::MatrixXd* value;
  Eigen::MatrixXd* grad;  // nullptr for running statistics
};

namespace detail {

inline Eigen::MatrixXd he_init(Eigen::Index rows, Eigen::Index cols,
                               Eigen::Index fan_in, Rng& rng) {
  const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = s * rng.gaussian();
  return m;
}

inline Eigen::MatrixXd uniform_init(Eigen::Index rows, Eigen::Index cols,
                                    Eigen::Index fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-s, s);
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Conv1d: temporal convolution, stride 1, same zero padding, odd kernel.
// ---------------------------------------------------------------------------
class Conv1d {
 public:
  Conv1d(int in_ch, int out_ch, int kernel, Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel) {
    if (kernel % 2 == 0) throw config_error("conv1d: kernel must be odd");
    w_ = detail::he_init(out_ch, static_cast<Eigen::Index>(in_ch) * kernel,
                         static_cast<Eigen::Index>(in_ch) * kernel, rng);
    b_ = Eigen::MatrixXd::Zero(out_ch, 1);
    dw_.setZero(w_.rows(), w_.cols());
    db_.setZero(b_.rows(), 1);
  }

  FeatureBatch forward(const FeatureBatch& x, bool train) {
    x.check();
    if (x.f != 1) throw shape_error("conv1d: expects f == 1 layout");
    if (x.data.rows() != in_ch_)
      throw shape_error(cat("conv1d: got ", x.data.rows(), " channels, expected ",
                            in_ch_));
    const int t = x.t, pad = k_ / 2;
    Eigen::MatrixXd col(static_cast<Eigen::Index>(in_ch_) * k_,
                        x.data.cols());
    col.setZero();
    for (int clip = 0; clip < x.clips; ++clip) {
      const Eigen::Index base = static_cast<Eigen::Index>(clip) * t;
      for (int d = -pad; d <= pad; ++d) {
        const Eigen::Index row0 = static_cast<Eigen::Index>(d + pad) * in_ch_;
        const int src_lo = std::max(0, -d), src_hi = std::min(t, t - d);
        if (src_hi <= src_lo) continue;
        col.block(row0, base + src_lo, in_ch_, src_hi - src_lo) =
            x.data.block(0, base + src_lo + d, in_ch_, src_hi - src_lo);
      }
    }
    FeatureBatch y{Eigen::MatrixXd(), x.clips, 1, t};
    y.data.noalias() = w_ * col;
    y.data.colwise() += b_.col(0);
    if (train) col_ = std::move(col);
    meta_ = {x.clips, t};
    return y;
  }

  FeatureBatch backward(const FeatureBatch& dy, bool need_dx) {
    dw_.noalias() += dy.data * col_.transpose();
    db_.col(0).noalias() += dy.data.rowwise().sum();
    FeatureBatch dx{Eigen::MatrixXd(), meta_.clips, 1, meta_.t};
    if (!need_dx) return dx;
    const Eigen::MatrixXd dcol = w_.transpose() * dy.data;
    const int t = meta_.t, pad = k_ / 2;
    dx.data.setZero(in_ch_, dcol.cols());
    for (int clip = 0; clip < meta_.clips; ++clip) {
      const Eigen::Index base = static_cast<Eigen::Index>(clip) * t;
      for (int d = -pad; d <= pad; ++d) {
        const Eigen::Index row0 = static_cast<Eigen::Index>(d + pad) * in_ch_;
        const int src_lo = std::max(0, -d), src_hi = std::min(t, t - d);
        if (src_hi <= src_lo) continue;
        dx.data.block(0, base + src_lo + d, in_ch_, src_hi - src_lo) +=
            dcol.block(row0, base + src_lo, in_ch_, src_hi - src_lo);
      }
    }
    return dx;
  }

  std::vector<TensorRef> tensors(const std::string& prefix) {
    return {{prefix + ".w", &w_, &dw_}, {prefix + ".b", &b_, &db_}};
  }

  int out_channels() const { return out_ch_; }

 private:
  int in_ch_, out_ch_, k_;
  Eigen::MatrixXd w_, b_, dw_, db_;
  Eigen::MatrixXd col_;
  struct {
    int clips = 0, t = 0;
  } meta_;
};

// ---------------------------------------------------------------------------
// Conv2d: 3x3 (or any odd) kernel over the (f, t) grid, same zero padding.
// ---------------------------------------------------------------------------
class Conv2d {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel) {
    if (kernel % 2 == 0) throw config_error("conv2d: kernel must be odd");
    const Eigen::Index fan =
        static_cast<Eigen::Index>(in_ch) * kernel * kernel;
    w_ = detail::he_init(out_ch, fan, fan, rng);
    b_ = Eigen::MatrixXd::Zero(out_ch, 1);
    dw_.setZero(w_.rows(), w_.cols());
    db_.setZero(b_.rows(), 1);
  }

  FeatureBatch forward(const FeatureBatch& x, bool train) {
    x.check();
    if (x.data.rows() != in_ch_)
      throw shape_error(cat("conv2d: got ", x.data.rows(), " channels, expected ",
                            in_ch_));
    const int f = x.f, t = x.t, pad = k_ / 2;
    Eigen::MatrixXd col(static_cast<Eigen::Index>(in_ch_) * k_ * k_,
                        x.data.cols());
    col.setZero();
    for (int clip = 0; clip < x.clips; ++clip) {
      const Eigen::Index base = static_cast<Eigen::Index>(clip) * f * t;
      for (int df = -pad; df <= pad; ++df) {
        for (int dt = -pad; dt <= pad; ++dt) {
          const Eigen::Index row0 =
              (static_cast<Eigen::Index>(df + pad) * k_ + (dt + pad)) * in_ch_;
          const int f_lo = std::max(0, -df), f_hi = std::min(f, f - df);
          const int t_lo = std::max(0, -dt), t_hi = std::min(t, t - dt);
          for (int fi = f_lo; fi < f_hi; ++fi) {
            col.block(row0, base + static_cast<Eigen::Index>(fi) * t + t_lo,
                      in_ch_, t_hi - t_lo) =
                x.data.block(0,
                             base + static_cast<Eigen::Index>(fi + df) * t +
                                 t_lo + dt,
                             in_ch_, t_hi - t_lo);
          }
        }
      }
    }
    FeatureBatch y{Eigen::MatrixXd(), x.clips, f, t};
    y.data.noalias() = w_ * col;
    y.data.colwise() += b_.col(0);
    if (train) col_ = std::move(col);
    meta_ = {x.clips, f, t};
    return y;
  }

  FeatureBatch backward(const FeatureBatch& dy, bool need_dx) {
    dw_.noalias() += dy.data * col_.transpose();
    db_.col(0).noalias() += dy.data.rowwise().sum();
    FeatureBatch dx{Eigen::MatrixXd(), meta_.clips, meta_.f, meta_.t};
    if (!need_dx) return dx;
    const Eigen::MatrixXd dcol = w_.transpose() * dy.data;
    const int f = meta_.f, t = meta_.t, pad = k_ / 2;
    dx.data.setZero(in_ch_, dcol.cols());
    for (int clip = 0; clip < meta_.clips; ++clip) {
      const Eigen::Index base = static_cast<Eigen::Index>(clip) * f * t;
      for (int df = -pad; df <= pad; ++df) {
        for (int dt = -pad; dt <= pad; ++dt) {
          const Eigen::Index row0 =
              (static_cast<Eigen::Index>(df + pad) * k_ + (dt + pad)) * in_ch_;
          const int f_lo = std::max(0, -df), f_hi = std::min(f, f - df);
          const int t_lo = std::max(0, -dt), t_hi = std::min(t, t - dt);
          for (int fi = f_lo; fi < f_hi; ++fi) {
            dx.data.block(0,
                          base + static_cast<Eigen::Index>(fi + df) * t +
                              t_lo + dt,
                          in_ch_, t_hi - t_lo) +=
                dcol.block(row0,
                           base + static_cast<Eigen::Index>(fi) * t + t_lo,
                           in_ch_, t_hi - t_lo);
          }
        }
      }
    }
    return dx;
  }

  std::vector<TensorRef> tensors(const std::string& prefix) {
    return {{prefix + ".w", &w_, &dw_}, {prefix + ".b", &b_, &db_}};
  }

 private:
  int in_ch_, out_ch_, k_;
  Eigen::MatrixXd w_, b_, dw_, db_;
  Eigen::MatrixXd col_;
  struct {
    int clips = 0, f = 0, t = 0;
  } meta_;
};

// ---------------------------------------------------------------------------
// BatchNorm over channels (rows). Training uses batch statistics across all
// columns and updates running averages with momentum 0.9; inference uses the
// running averages.
// ---------------------------------------------------------------------------
class BatchNorm {
 public:
  explicit BatchNorm(int channels, double momentum = 0.9, double eps = 1e-5)
      : momentum_(momentum), eps_(eps) {
    gamma_ = Eigen::MatrixXd::Ones(channels, 1);
    beta_ = Eigen::MatrixXd::Zero(channels, 1);
    running_mean_ = Eigen::MatrixXd::Zero(channels, 1);
    running_var_ = Eigen::MatrixXd::Ones(channels, 1);
    dgamma_.setZero(channels, 1);
    dbeta_.setZero(channels, 1);
  }

  FeatureBatch forward(const FeatureBatch& x, bool train) {
    const Eigen::Index n = x.data.cols();
    FeatureBatch y{Eigen::MatrixXd(), x.clips, x.f, x.t};
    if (train) {
      mean_ = x.data.rowwise().mean();
      const Eigen::MatrixXd centered = x.data.colwise() - mean_.col(0);
      var_ = centered.array().square().rowwise().mean();
      inv_std_ = (var_.array() + eps_).rsqrt();
      xhat_ = centered.array().colwise() * inv_std_.col(0).array();
      y.data = (xhat_.array().colwise() * gamma_.col(0).array()).colwise() +
               beta_.col(0).array();
      running_mean_ = momentum_ * running_mean_ + (1.0 - momentum_) * mean_;
      running_var_ = momentum_ * running_var_ + (1.0 - momentum_) * var_;
      n_ = n;
    } else {
      Eigen::ArrayXd inv = (running_var_.col(0).array() + eps_).rsqrt();
      y.data = (((x.data.colwise() - running_mean_.col(0)).array().colwise() *
                 inv) .colwise() * gamma_.col(0).array())
                   .colwise() +
               beta_.col(0).array();
    }
    return y;
  }

  FeatureBatch backward(const FeatureBatch& dy) {
    const double inv_n = 1.0 / static_cast<double>(n_);
    dgamma_.col(0).noalias() +=
        (dy.data.array() * xhat_.array()).rowwise().sum().matrix();
    dbeta_.col(0).noalias() += dy.data.rowwise().sum();

    // dx = (gamma * inv_std / n) * (n*dy - sum(dy) - xhat * sum(dy*xhat))
    Eigen::ArrayXd sum_dy = dy.data.rowwise().sum();
    Eigen::ArrayXd sum_dy_xhat =
        (dy.data.array() * xhat_.array()).rowwise().sum();
    FeatureBatch dx{Eigen::MatrixXd(), dy.clips, dy.f, dy.t};
    dx.data =
        (((dy.data.array() * static_cast<double>(n_)).colwise() - sum_dy) -
         (xhat_.array().colwise() * sum_dy_xhat))
            .colwise() *
        (gamma_.col(0).array() * inv_std_.col(0).array() * inv_n);
    return dx;
  }

  std::vector<TensorRef> tensors(const std::string& prefix) {
    return {{prefix + ".gamma", &gamma_, &dgamma_},
            {prefix + ".beta", &beta_, &dbeta_},
            {prefix + ".running_mean", &running_mean_, nullptr},
            {prefix + ".running_var", &running_var_, nullptr}};
  }

 private:
  double momentum_, eps_;
  Eigen::MatrixXd gamma_, beta_, running_mean_, running_var_;
  Eigen::MatrixXd dgamma_, dbeta_;
  Eigen::MatrixXd mean_, var_, inv_std_, xhat_;
  Eigen::Index n_ = 0;
};

// ---------------------------------------------------------------------------
// ReLU.
// ---------------------------------------------------------------------------
class Relu {
 public:
  FeatureBatch forward(const FeatureBatch& x, bool train) {
    FeatureBatch y{x.data.cwiseMax(0.0), x.clips, x.f, x.t};
    if (train) mask_ = (x.data.array() > 0.0).cast<double>();
    return y;
  }

  FeatureBatch backward(const FeatureBatch& dy) {
    return {Eigen::MatrixXd(dy.data.array() * mask_.array()), dy.clips, dy.f,
            dy.t};
  }

 private:
  Eigen::ArrayXXd mask_;
};

// ---------------------------------------------------------------------------
// Max pooling over the frequency axis, window == stride, partial window at
// the top edge. Time is preserved.
// ---------------------------------------------------------------------------
class MaxPoolFreq {
 public:
  explicit MaxPoolFreq(int pool) : pool_(pool) {
    if (pool < 1) throw config_error("maxpool: pool must be >= 1");
  }

  static int out_f(int f, int pool) { return (f + pool - 1) / pool; }

  FeatureBatch forward(const FeatureBatch& x, bool train) {
    x.check();
    const int f = x.f, t = x.t;
    const int fo = out_f(f, pool_);
    FeatureBatch y{Eigen::MatrixXd(x.data.rows(),
                                   static_cast<Eigen::Index>(x.clips) * fo * t),
                   x.clips, fo, t};
    if (train) argmax_.resize(x.data.rows(), y.data.cols());
    for (int clip = 0; clip < x.clips; ++clip) {
      const Eigen::Index in_base = static_cast<Eigen::Index>(clip) * f * t;
      const Eigen::Index out_base = static_cast<Eigen::Index>(clip) * fo * t;
      for (int fg = 0; fg < fo; ++fg) {
        const int f_lo = fg * pool_, f_hi = std::min(f, f_lo + pool_);
        for (int ti = 0; ti < t; ++ti) {
          const Eigen::Index out_col = out_base + static_cast<Eigen::Index>(fg) * t + ti;
          for (Eigen::Index c = 0; c < x.data.rows(); ++c) {
            double best = x.data(c, in_base + static_cast<Eigen::Index>(f_lo) * t + ti);
            int best_f = f_lo;
            for (int fi = f_lo + 1; fi < f_hi; ++fi) {
              const double v =
                  x.data(c, in_base + static_cast<Eigen::Index>(fi) * t + ti);
              if (v > best) {
                best = v;
                best_f = fi;
              }
            }
            y.data(c, out_col) = best;
            if (train) argmax_(c, out_col) = best_f;
          }
        }
      }
    }
    meta_ = {x.clips, f, t};
    return y;
  }

  FeatureBatch backward(const FeatureBatch& dy) {
    const int f = meta_.f, t = meta_.t;
    const int fo = out_f(f, pool_);
    FeatureBatch dx{Eigen::MatrixXd::Zero(
                        dy.data.rows(), static_cast<Eigen::Index>(meta_.clips) * f * t),
                    meta_.clips, f, t};
    for (int clip = 0; clip < meta_.clips; ++clip) {
      const Eigen::Index in_base = static_cast<Eigen::Index>(clip) * f * t;
      const Eigen::Index out_base = static_cast<Eigen::Index>(clip) * fo * t;
      for (int fg = 0; fg < fo; ++fg) {
        for (int ti = 0; ti < t; ++ti) {
          const Eigen::Index out_col =
              out_base + static_cast<Eigen::Index>(fg) * t + ti;
          for (Eigen::Index c = 0; c < dy.data.rows(); ++c) {
            const int best_f = static_cast<int>(argmax_(c, out_col));
            dx.data(c, in_base + static_cast<Eigen::Index>(best_f) * t + ti) +=
                dy.data(c, out_col);
          }
        }
      }
    }
    return dx;
  }

 private:
  int pool_;
  Eigen::MatrixXi argmax_;
  struct {
    int clips = 0, f = 0, t = 0;
  } meta_;
};

// ---------------------------------------------------------------------------
// Folds the residual frequency axis into channels: (C, f, t) -> (C*f, 1, t).
// Pure permutation; backward is the inverse permutation.
// ---------------------------------------------------------------------------
class FreqToChannels {
 public:
  FeatureBatch forward(const FeatureBatch& x, bool) {
    x.check();
    const Eigen::Index c = x.data.rows();
    const int f = x.f, t = x.t;
    FeatureBatch y{Eigen::MatrixXd(c * f, static_cast<Eigen::Index>(x.clips) * t),
                   x.clips, 1, t};
    for (int clip = 0; clip < x.clips; ++clip)
      for (int fi = 0; fi < f; ++fi)
        y.data.block(static_cast<Eigen::Index>(fi) * c,
                     static_cast<Eigen::Index>(clip) * t, c, t) =
            x.data.block(0,
                         (static_cast<Eigen::Index>(clip) * f + fi) * t, c, t);
    meta_ = {x.clips, f, t, static_cast<int>(c)};
    return y;
  }

  FeatureBatch backward(const FeatureBatch& dy) {
    const int f = meta_.f, t = meta_.t, c = meta_.c;
    FeatureBatch dx{Eigen::MatrixXd(c, static_cast<Eigen::Index>(meta_.clips) * f * t),
                    meta_.clips, f, t};
    for (int clip = 0; clip < meta_.clips; ++clip)
      for (int fi = 0; fi < f; ++fi)
        dx.data.block(0, (static_cast<Eigen::Index>(clip) * f + fi) * t, c, t) =
            dy.data.block(static_cast<Eigen::Index>(fi) * c,
                          static_cast<Eigen::Index>(clip) * t, c, t);
    return dx;
  }

 private:
  struct {
    int clips = 0, f = 0, t = 0, c = 0;
  } meta_;
};

// ---------------------------------------------------------------------------
// Bidirectional GRU over the time axis; output is [forward; backward] state
// per frame (2H x t). Clips are processed in lockstep, one GEMM per step.
// ---------------------------------------------------------------------------
class BiGru {
 public:
  BiGru(int in_dim, int hidden, Rng& rng) : in_(in_dim), h_(hidden) {
    for (int d = 0; d < 2; ++d) {
      dir_[d].wz = detail::uniform_init(hidden, in_dim, in_dim, rng);
      dir_[d].wr = detail::uniform_init(hidden, in_dim, in_dim, rng);
      dir_[d].wn = detail::uniform_init(hidden, in_dim, in_dim, rng);
      dir_[d].uz = detail::uniform_init(hidden, hidden, hidden, rng);
      dir_[d].ur = detail::uniform_init(hidden, hidden, hidden, rng);
      dir_[d].un = detail::uniform_init(hidden, hidden, hidden, rng);
      dir_[d].bz = Eigen::MatrixXd::Zero(hidden, 1);
      dir_[d].br = Eigen::MatrixXd::Zero(hidden, 1);
      dir_[d].bn = Eigen::MatrixXd::Zero(hidden, 1);
      dir_[d].zero_grads();
    }
  }

  FeatureBatch forward(const FeatureBatch& x, bool train) {
    x.check();
    if (x.f != 1) throw shape_error("bigru: expects f == 1 layout");
    if (x.data.rows() != in_)
      throw shape_error(cat("bigru: got ", x.data.rows(), " input dims, expected ",
                            in_));
    const int t = x.t, B = x.clips;
    FeatureBatch y{Eigen::MatrixXd(2 * h_, x.data.cols()), B, 1, t};
    if (train) {
      x_steps_.assign(static_cast<std::size_t>(t), Eigen::MatrixXd());
      for (int ti = 0; ti < t; ++ti) x_steps_[static_cast<std::size_t>(ti)] = gather(x, ti);
    }
    for (int d = 0; d < 2; ++d) {
      auto& cache = cache_[d];
      if (train) {
        cache.z.assign(static_cast<std::size_t>(t), Eigen::MatrixXd());
        cache.r.assign(static_cast<std::size_t>(t), Eigen::MatrixXd());
        cache.n.assign(static_cast<std::size_t>(t), Eigen::MatrixXd());
        cache.m.assign(static_cast<std::size_t>(t), Eigen::MatrixXd());
        cache.h_prev.assign(static_cast<std::size_t>(t), Eigen::MatrixXd());
      }
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(h_, B);
      for (int step = 0; step < t; ++step) {
        const int ti = d == 0 ? step : t - 1 - step;
        const Eigen::MatrixXd xt = train ? x_steps_[static_cast<std::size_t>(ti)] : gather(x, ti);
        Eigen::MatrixXd z =
            sigmoid(((dir_[d].wz * xt + dir_[d].uz * h).colwise() + dir_[d].bz.col(0)));
        Eigen::MatrixXd r =
            sigmoid(((dir_[d].wr * xt + dir_[d].ur * h).colwise() + dir_[d].br.col(0)));
        Eigen::MatrixXd m = dir_[d].un * h;
        Eigen::MatrixXd n =
            (((dir_[d].wn * xt).array() + (r.array() * m.array())).colwise() +
             dir_[d].bn.col(0).array())
                .tanh();
        if (train) {
          cache.h_prev[static_cast<std::size_t>(ti)] = h;
          cache.z[static_cast<std::size_t>(ti)] = z;
          cache.r[static_cast<std::size_t>(ti)] = r;
          cache.n[static_cast<std::size_t>(ti)] = n;
          cache.m[static_cast<std::size_t>(ti)] = m;
        }
        h = ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
        scatter(y, ti, h, d * h_);
      }
    }
    meta_ = {B, t};
    return y;
  }

  FeatureBatch backward(const FeatureBatch& dy, bool need_dx) {
    const int t = meta_.t, B = meta_.clips;
    FeatureBatch dx{Eigen::MatrixXd::Zero(in_, static_cast<Eigen::Index>(B) * t),
                    B, 1, t};
    for (int d = 0; d < 2; ++d) {
      auto& cache = cache_[d];
      Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(h_, B);
      for (int step = t - 1; step >= 0; --step) {
        const int ti = d == 0 ? step : t - 1 - step;
        dh += gather_rows(dy, ti, d * h_);
        const auto& z = cache.z[static_cast<std::size_t>(ti)];
        const auto& r = cache.r[static_cast<std::size_t>(ti)];
        const auto& n = cache.n[static_cast<std::size_t>(ti)];
        const auto& m = cache.m[static_cast<std::size_t>(ti)];
        const auto& hp = cache.h_prev[static_cast<std::size_t>(ti)];
        const auto& xt = x_steps_[static_cast<std::size_t>(ti)];

        Eigen::MatrixXd dz =
            (dh.array() * (hp.array() - n.array()) * z.array() * (1.0 - z.array()))
                .matrix();
        Eigen::MatrixXd dn =
            (dh.array() * (1.0 - z.array()) * (1.0 - n.array().square())).matrix();
        Eigen::MatrixXd dr =
            (dn.array() * m.array() * r.array() * (1.0 - r.array())).matrix();
        Eigen::MatrixXd dm = (dn.array() * r.array()).matrix();

        dir_[d].dwz.noalias() += dz * xt.transpose();
        dir_[d].dwr.noalias() += dr * xt.transpose();
        dir_[d].dwn.noalias() += dn * xt.transpose();
        dir_[d].duz.noalias() += dz * hp.transpose();
        dir_[d].dur.noalias() += dr * hp.transpose();
        dir_[d].dun.noalias() += dm * hp.transpose();
        dir_[d].dbz.col(0).noalias() += dz.rowwise().sum();
        dir_[d].dbr.col(0).noalias() += dr.rowwise().sum();
        dir_[d].dbn.col(0).noalias() += dn.rowwise().sum();

        if (need_dx) {
          Eigen::MatrixXd dxt = dir_[d].wz.transpose() * dz +
                                dir_[d].wr.transpose() * dr +
                                dir_[d].wn.transpose() * dn;
          scatter(dx, ti, dxt, 0, true);
        }
        dh = (dh.array() * z.array()).matrix() +
             dir_[d].uz.transpose() * dz + dir_[d].ur.transpose() * dr +
             dir_[d].un.transpose() * dm;
      }
    }
    return dx;
  }

  std::vector<TensorRef> tensors(const std::string& prefix) {
    std::vector<TensorRef> out;
    const char* dn[2] = {"fwd", "bwd"};
    for (int d = 0; d < 2; ++d) {
      auto& g = dir_[d];
      const std::string p = prefix + "." + dn[d];
      out.push_back({p + ".wz", &g.wz, &g.dwz});
      out.push_back({p + ".wr", &g.wr, &g.dwr});
      out.push_back({p + ".wn", &g.wn, &g.dwn});
      out.push_back({p + ".uz", &g.uz, &g.duz});
      out.push_back({p + ".ur", &g.ur, &g.dur});
      out.push_back({p + ".un", &g.un, &g.dun});
      out.push_back({p + ".bz", &g.bz, &g.dbz});
      out.push_back({p + ".br", &g.br, &g.dbr});
      out.push_back({p + ".bn", &g.bn, &g.dbn});
    }
    return out;
  }

 private:
  struct Gates {
    Eigen::MatrixXd wz, wr, wn, uz, ur, un, bz, br, bn;
    Eigen::MatrixXd dwz, dwr, dwn, duz, dur, dun, dbz, dbr, dbn;
    void zero_grads() {
      dwz.setZero(wz.rows(), wz.cols());
      dwr.setZero(wr.rows(), wr.cols());
      dwn.setZero(wn.rows(), wn.cols());
      duz.setZero(uz.rows(), uz.cols());
      dur.setZero(ur.rows(), ur.cols());
      dun.setZero(un.rows(), un.cols());
      dbz.setZero(bz.rows(), 1);
      dbr.setZero(br.rows(), 1);
      dbn.setZero(bn.rows(), 1);
    }
  };
  struct Cache {
    std::vector<Eigen::MatrixXd> z, r, n, m, h_prev;
  };

  static Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) {
    return (1.0 / (1.0 + (-x.array()).exp())).matrix();
  }

  // Column ti of every clip, as an (rows x clips) matrix.
  Eigen::MatrixXd gather(const FeatureBatch& x, int ti) const {
    Eigen::MatrixXd out(x.data.rows(), x.clips);
    for (int clip = 0; clip < x.clips; ++clip)
      out.col(clip) = x.data.col(static_cast<Eigen::Index>(clip) * x.t + ti);
    return out;
  }

  Eigen::MatrixXd gather_rows(const FeatureBatch& x, int ti, int row0) const {
    Eigen::MatrixXd out(h_, x.clips);
    for (int clip = 0; clip < x.clips; ++clip)
      out.col(clip) =
          x.data.col(static_cast<Eigen::Index>(clip) * x.t + ti).segment(row0, h_);
    return out;
  }

  void scatter(FeatureBatch& y, int ti, const Eigen::MatrixXd& v, int row0,
               bool add = false) const {
    for (int clip = 0; clip < y.clips; ++clip) {
      auto seg = y.data.col(static_cast<Eigen::Index>(clip) * y.t + ti)
                     .segment(row0, v.rows());
      if (add)
        seg += v.col(clip);
      else
        seg = v.col(clip);
    }
  }

  int in_, h_;
  Gates dir_[2];
  Cache cache_[2];
  std::vector<Eigen::MatrixXd> x_steps_;
  struct {
    int clips = 0, t = 0;
  } meta_;
};

// ---------------------------------------------------------------------------
// Linear: y = w x + b on every column.
// ---------------------------------------------------------------------------
class Linear {
 public:
  Linear(int in_dim, int out_dim, Rng& rng) : in_(in_dim) {
    w_ = detail::uniform_init(out_dim, in_dim, in_dim, rng);
    b_ = Eigen::MatrixXd::Zero(out_dim, 1);
    dw_.setZero(w_.rows(), w_.cols());
    db_.setZero(b_.rows(), 1);
  }

  FeatureBatch forward(const FeatureBatch& x, bool train) {
    if (x.data.rows() != in_)
      throw shape_error(cat("linear: got ", x.data.rows(), " dims, expected ", in_));
    FeatureBatch y{Eigen::MatrixXd(), x.clips, x.f, x.t};
    y.data.noalias() = w_ * x.data;
    y.data.colwise() += b_.col(0);
    if (train) x_ = x.data;
    return y;
  }

  FeatureBatch backward(const FeatureBatch& dy, bool need_dx) {
    dw_.noalias() += dy.data * x_.transpose();
    db_.col(0).noalias() += dy.data.rowwise().sum();
    FeatureBatch dx{Eigen::MatrixXd(), dy.clips, dy.f, dy.t};
    if (need_dx) dx.data.noalias() = w_.transpose() * dy.data;
    return dx;
  }

  std::vector<TensorRef> tensors(const std::string& prefix) {
    return {{prefix + ".w", &w_, &dw_}, {prefix + ".b", &b_, &db_}};
  }

  Eigen::MatrixXd& weight() { return w_; }
  Eigen::MatrixXd& bias() { return b_; }

 private:
  int in_;
  Eigen::MatrixXd w_, b_, dw_, db_;
  Eigen::MatrixXd x_;
};

// ---------------------------------------------------------------------------
// Plain gradient descent: theta <- theta - alpha * grad. Optional momentum
// is off by default.
// ---------------------------------------------------------------------------
class Sgd {
 public:
  explicit Sgd(double lr, double momentum = 0.0)
      : lr_(lr), momentum_(momentum) {}

  void step(const std::vector<TensorRef>& tensors) {
    if (momentum_ > 0.0 && velocity_.size() != tensors.size())
      velocity_.assign(tensors.size(), Eigen::MatrixXd());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& tr = tensors[i];
      if (!tr.grad) continue;
      if (momentum_ > 0.0) {
        if (velocity_[i].size() == 0)
          velocity_[i] = Eigen::MatrixXd::Zero(tr.value->rows(), tr.value->cols());
        velocity_[i] = momentum_ * velocity_[i] + *tr.grad;
        *tr.value -= lr_ * velocity_[i];
      } else {
        *tr.value -= lr_ * *tr.grad;
      }
    }
  }

  static void zero_grads(const std::vector<TensorRef>& tensors) {
    for (const auto& tr : tensors)
      if (tr.grad) tr.grad->setZero();
  }

 private:
  double lr_, momentum_;
  std::vector<Eigen::MatrixXd> velocity_;
};

}  // namespace bdcca::nn
