#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "bdcca/common.hpp"

namespace bdcca {

// One sample per column; rows are the view's dimensions.
using ViewMatrix = Eigen::MatrixXd;

struct CovarianceEstimate {
  Eigen::MatrixXd c11;  // n1 x n1, symmetric, + r1*I
  Eigen::MatrixXd c22;  // n2 x n2, symmetric, + r1*I
  Eigen::MatrixXd c12;  // n1 x n2
  double r1 = 0.0;
  Eigen::Index sample_count = 0;
};

struct CcaSolution {
  Eigen::MatrixXd a1;                // n1 x k
  Eigen::MatrixXd a2;                // n2 x k
  std::vector<double> correlations;  // k values, non-increasing, in [0, 1]
  Eigen::Index k = 0;
};

namespace detail {

inline Eigen::MatrixXd center_rows(const ViewMatrix& h) {
  return h.colwise() - h.rowwise().mean();
}

// Symmetric inverse square root via eigendecomposition. Eigenvalues at or
// below the floor are an error, not a clamp: near-singular covariances point
// at degenerate data and need an explicit regularizer.
inline Eigen::MatrixXd sym_inv_sqrt(const Eigen::MatrixXd& m,
                                    double eig_floor = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success)
    throw singularity_error("cca: eigendecomposition failed");
  const Eigen::VectorXd& lam = es.eigenvalues();
  if (lam.minCoeff() <= eig_floor)
    throw singularity_error(
        cat("cca: covariance is near-singular (min eigenvalue ",
            lam.minCoeff(), " <= ", eig_floor,
            "); pass a regularizer r1 > 0"));
  Eigen::VectorXd inv_sqrt = lam.array().sqrt().inverse();
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// Mean-centered covariance estimates with 1/(m-1) normalization; r1*I is
// added to both within-view blocks.
inline CovarianceEstimate estimate_covariances(const ViewMatrix& h1,
                                               const ViewMatrix& h2, double r1) {
  if (h1.cols() != h2.cols())
    throw shape_error(cat("estimate_covariances: sample count mismatch, ",
                          h1.cols(), " vs ", h2.cols()));
  if (h1.cols() < 2)
    throw validation_error(cat("estimate_covariances: need >= 2 samples, got ",
                               h1.cols()));
  if (r1 < 0.0)
    throw config_error(cat("estimate_covariances: r1 must be >= 0, got ", r1));
  if (!h1.allFinite() || !h2.allFinite())
    throw validation_error("estimate_covariances: non-finite entries in view");

  const double inv = 1.0 / static_cast<double>(h1.cols() - 1);
  const Eigen::MatrixXd hc1 = detail::center_rows(h1);
  const Eigen::MatrixXd hc2 = detail::center_rows(h2);

  CovarianceEstimate cov;
  cov.r1 = r1;
  cov.sample_count = h1.cols();
  cov.c11 = inv * (hc1 * hc1.transpose());
  cov.c22 = inv * (hc2 * hc2.transpose());
  cov.c12 = inv * (hc1 * hc2.transpose());
  cov.c11.diagonal().array() += r1;
  cov.c22.diagonal().array() += r1;
  return cov;
}

// T = C11^{-1/2} C12 C22^{-1/2}; its singular values are the canonical
// correlations.
inline Eigen::MatrixXd whitened_cross(const CovarianceEstimate& cov) {
  return detail::sym_inv_sqrt(cov.c11) * cov.c12 * detail::sym_inv_sqrt(cov.c22);
}

// Closed-form CCA: project through the whitened cross-covariance SVD.
// Columns of a1/a2 are ordered by descending correlation; each left singular
// vector is sign-fixed so its largest-magnitude entry is positive (the right
// vector flips with it), making the output deterministic.
inline CcaSolution cca_fit(const ViewMatrix& x1, const ViewMatrix& x2,
                           Eigen::Index k, double r1) {
  if (k < 1 || k > std::min(x1.rows(), x2.rows()))
    throw config_error(cat("cca_fit: k=", k, " out of range [1, ",
                           std::min(x1.rows(), x2.rows()), "]"));
  if (x1.cols() <= std::max(x1.rows(), x2.rows()))
    warn(cat("cca_fit: only ", x1.cols(), " samples for dimensions (",
             x1.rows(), ", ", x2.rows(), "); estimates will be noisy"));

  const CovarianceEstimate cov = estimate_covariances(x1, x2, r1);
  const Eigen::MatrixXd k1 = detail::sym_inv_sqrt(cov.c11);
  const Eigen::MatrixXd k2 = detail::sym_inv_sqrt(cov.c22);
  const Eigen::MatrixXd t = k1 * cov.c12 * k2;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(t, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::MatrixXd u = svd.matrixU().leftCols(k);
  Eigen::MatrixXd v = svd.matrixV().leftCols(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::Index imax = 0;
    u.col(c).cwiseAbs().maxCoeff(&imax);
    if (u(imax, c) < 0.0) {
      u.col(c) = -u.col(c);
      v.col(c) = -v.col(c);
    }
  }

  CcaSolution sol;
  sol.k = k;
  sol.a1 = k1 * u;
  sol.a2 = k2 * v;
  sol.correlations.resize(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i)
    sol.correlations[static_cast<std::size_t>(i)] =
        std::clamp(svd.singularValues()(i), 0.0, 1.0);
  return sol;
}

// Trace norm of T: the total canonical correlation over all components.
// Values are not clamped here; this is the quantity the DCCA loss trains on.
inline double total_correlation(const ViewMatrix& h1, const ViewMatrix& h2,
                                double r1) {
  const Eigen::MatrixXd t = whitened_cross(estimate_covariances(h1, h2, r1));
  return Eigen::JacobiSVD<Eigen::MatrixXd>(t).singularValues().sum();
}

}  // namespace bdcca
