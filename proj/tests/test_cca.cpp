#include <catch2/catch_amalgamated.hpp>

#include "bdcca/cca.hpp"
#include "bdcca/rng.hpp"
#include "oracles.hpp"

using namespace bdcca;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.gaussian();
  return m;
}

}  // namespace

TEST_CASE("estimate_covariances on the +-1 fixture", "[cca]") {
  Eigen::MatrixXd h(1, 2);
  h << 1.0, -1.0;
  auto cov = estimate_covariances(h, h, 0.0);
  REQUIRE(cov.c11(0, 0) == Catch::Approx(2.0));
  REQUIRE(cov.c22(0, 0) == Catch::Approx(2.0));
  REQUIRE(cov.c12(0, 0) == Catch::Approx(2.0));
}

TEST_CASE("estimate_covariances adds the regularizer exactly", "[cca]") {
  auto h1 = random_matrix(3, 20, 1);
  auto h2 = random_matrix(2, 20, 2);
  auto base = estimate_covariances(h1, h2, 0.0);
  auto reg = estimate_covariances(h1, h2, 0.1);
  Eigen::MatrixXd expect11 = base.c11 + 0.1 * Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd expect22 = base.c22 + 0.1 * Eigen::MatrixXd::Identity(2, 2);
  REQUIRE((reg.c11 - expect11).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((reg.c22 - expect22).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((reg.c12 - base.c12).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("estimate_covariances matches the double-loop oracle", "[cca]") {
  auto h1 = random_matrix(3, 10, 5);
  auto h2 = random_matrix(2, 10, 6);
  auto cov = estimate_covariances(h1, h2, 0.0);
  REQUIRE((cov.c11 - oracles::cov_double_loop(h1, h1)).cwiseAbs().maxCoeff() <
          1e-12);
  REQUIRE((cov.c22 - oracles::cov_double_loop(h2, h2)).cwiseAbs().maxCoeff() <
          1e-12);
  REQUIRE((cov.c12 - oracles::cov_double_loop(h1, h2)).cwiseAbs().maxCoeff() <
          1e-12);
}

TEST_CASE("estimate_covariances input validation", "[cca]") {
  REQUIRE_THROWS_AS(
      estimate_covariances(random_matrix(2, 5, 1), random_matrix(2, 6, 2), 0.0),
      shape_error);
  REQUIRE_THROWS_AS(
      estimate_covariances(random_matrix(2, 1, 1), random_matrix(2, 1, 2), 0.0),
      validation_error);
  REQUIRE_THROWS_AS(
      estimate_covariances(random_matrix(2, 5, 1), random_matrix(2, 5, 2), -1.0),
      config_error);
}

TEST_CASE("whitened_cross identity and zero fixtures", "[cca]") {
  CovarianceEstimate cov;
  cov.c11 = Eigen::MatrixXd::Identity(3, 3);
  cov.c22 = Eigen::MatrixXd::Identity(2, 2);
  cov.c12 = random_matrix(3, 2, 4);
  cov.sample_count = 10;
  REQUIRE((whitened_cross(cov) - cov.c12).cwiseAbs().maxCoeff() < 1e-14);

  cov.c12.setZero();
  REQUIRE(whitened_cross(cov).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("whitened_cross matches extended-precision 2x2 oracle", "[cca]") {
  // Closed-form symmetric 2x2 eigendecomposition in long double.
  auto inv_sqrt_2x2 = [](long double a, long double b, long double c) {
    const long double tr = a + c;
    const long double det = a * c - b * b;
    const long double disc = std::sqrt(tr * tr / 4.0L - det);
    const long double l1 = tr / 2.0L + disc, l2 = tr / 2.0L - disc;
    // Eigenvector for l1: (b, l1 - a) unless degenerate.
    long double v1x = b, v1y = l1 - a;
    if (std::abs(v1x) + std::abs(v1y) < 1e-30L) {
      v1x = 1.0L;
      v1y = 0.0L;
    }
    const long double n1 = std::sqrt(v1x * v1x + v1y * v1y);
    v1x /= n1;
    v1y /= n1;
    const long double v2x = -v1y, v2y = v1x;
    const long double s1 = 1.0L / std::sqrt(l1), s2 = 1.0L / std::sqrt(l2);
    Eigen::MatrixXd out(2, 2);
    out(0, 0) = static_cast<double>(s1 * v1x * v1x + s2 * v2x * v2x);
    out(0, 1) = static_cast<double>(s1 * v1x * v1y + s2 * v2x * v2y);
    out(1, 0) = out(0, 1);
    out(1, 1) = static_cast<double>(s1 * v1y * v1y + s2 * v2y * v2y);
    return out;
  };

  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    // Random SPD 2x2 via A A' + I.
    Eigen::MatrixXd a = random_matrix(2, 2, 100 + trial);
    Eigen::MatrixXd c11 = a * a.transpose() + Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd b = random_matrix(2, 2, 200 + trial);
    Eigen::MatrixXd c22 = b * b.transpose() + Eigen::MatrixXd::Identity(2, 2);
    CovarianceEstimate cov;
    cov.c11 = c11;
    cov.c22 = c22;
    cov.c12 = random_matrix(2, 2, 300 + trial);
    cov.sample_count = 10;

    Eigen::MatrixXd k1 = inv_sqrt_2x2(c11(0, 0), c11(0, 1), c11(1, 1));
    Eigen::MatrixXd k2 = inv_sqrt_2x2(c22(0, 0), c22(0, 1), c22(1, 1));
    Eigen::MatrixXd expect = k1 * cov.c12 * k2;
    REQUIRE((whitened_cross(cov) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("whitened_cross demands positive definite covariances", "[cca]") {
  CovarianceEstimate cov;
  cov.c11 = Eigen::MatrixXd::Zero(2, 2);  // singular
  cov.c22 = Eigen::MatrixXd::Identity(2, 2);
  cov.c12 = Eigen::MatrixXd::Zero(2, 2);
  cov.sample_count = 10;
  REQUIRE_THROWS_WITH(whitened_cross(cov),
                      Catch::Matchers::ContainsSubstring("r1"));
}

TEST_CASE("cca_fit identical and negated views give correlation 1", "[cca]") {
  auto x1 = random_matrix(3, 60, 7);
  auto sol = cca_fit(x1, x1, 3, 0.0);
  for (double c : sol.correlations) REQUIRE(c == Catch::Approx(1.0).margin(1e-8));

  Eigen::MatrixXd x2 = -x1;
  auto neg = cca_fit(x1, x2, 3, 0.0);
  for (double c : neg.correlations) REQUIRE(c == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("cca_fit top correlation matches the alternating maximizer", "[cca]") {
  for (int trial = 0; trial < 8; ++trial) {
    auto x1 = random_matrix(2, 50, 400 + trial);
    Eigen::MatrixXd mix = random_matrix(2, 2, 500 + trial);
    // Correlated views: x2 shares part of x1's variation.
    Eigen::MatrixXd x2 =
        mix * x1 + 0.8 * random_matrix(2, 50, 600 + trial);
    auto sol = cca_fit(x1, x2, 2, 0.0);
    const double oracle = oracles::als_top_correlation(x1, x2);
    REQUIRE(sol.correlations[0] == Catch::Approx(oracle).margin(1e-5));
  }
}

TEST_CASE("cca_fit whitened projections are orthonormal", "[cca]") {
  auto x1 = random_matrix(4, 80, 8);
  auto x2 = random_matrix(3, 80, 9);
  const double r1 = 1e-4;
  auto sol = cca_fit(x1, x2, 3, r1);
  auto cov = estimate_covariances(x1, x2, r1);
  Eigen::MatrixXd g1 = sol.a1.transpose() * cov.c11 * sol.a1;
  Eigen::MatrixXd g2 = sol.a2.transpose() * cov.c22 * sol.a2;
  REQUIRE((g1 - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((g2 - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("cca_fit correlations are sorted and in [0, 1]", "[cca]") {
  auto x1 = random_matrix(4, 100, 10);
  auto x2 = random_matrix(4, 100, 11);
  auto sol = cca_fit(x1, x2, 4, 1e-6);
  for (std::size_t i = 0; i + 1 < sol.correlations.size(); ++i)
    REQUIRE(sol.correlations[i] >= sol.correlations[i + 1]);
  for (double c : sol.correlations) {
    REQUIRE(c >= 0.0);
    REQUIRE(c <= 1.0 + 1e-10);
  }
}

TEST_CASE("cca_fit k out of range is rejected", "[cca]") {
  auto x1 = random_matrix(2, 30, 1);
  auto x2 = random_matrix(3, 30, 2);
  REQUIRE_THROWS_AS(cca_fit(x1, x2, 3, 0.0), config_error);
  REQUIRE_THROWS_AS(cca_fit(x1, x2, 0, 0.0), config_error);
}

TEST_CASE("cca correlations are invariant to per-view scaling", "[cca]") {
  auto x1 = random_matrix(3, 70, 12);
  auto x2 = random_matrix(2, 70, 13);
  auto base = cca_fit(x1, x2, 2, 0.0);
  auto scaled = cca_fit(Eigen::MatrixXd(5.0 * x1),
                        Eigen::MatrixXd(0.03 * x2), 2, 0.0);
  for (std::size_t i = 0; i < base.correlations.size(); ++i)
    REQUIRE(scaled.correlations[i] ==
            Catch::Approx(base.correlations[i]).margin(1e-10));
}

TEST_CASE("cca correlations are invariant to invertible view maps", "[cca]") {
  auto x1 = random_matrix(3, 90, 14);
  auto x2 = random_matrix(3, 90, 15);
  Eigen::MatrixXd map1 = random_matrix(3, 3, 16);
  map1 += 3.0 * Eigen::MatrixXd::Identity(3, 3);  // safely invertible
  auto base = cca_fit(x1, x2, 3, 0.0);
  auto mapped = cca_fit(Eigen::MatrixXd(map1 * x1), x2, 3, 0.0);
  for (std::size_t i = 0; i < base.correlations.size(); ++i)
    REQUIRE(mapped.correlations[i] ==
            Catch::Approx(base.correlations[i]).margin(1e-8));
}

TEST_CASE("total_correlation identity limit approaches o", "[cca]") {
  auto h = random_matrix(4, 60, 17);
  const double tc = total_correlation(h, h, 1e-10);
  REQUIRE(tc == Catch::Approx(4.0).margin(1e-4));
}

TEST_CASE("total_correlation of uncorrelated views is zero", "[cca]") {
  Eigen::MatrixXd h1(1, 4), h2(1, 4);
  h1 << 1, -1, 1, -1;
  h2 << 1, 1, -1, -1;
  REQUIRE(total_correlation(h1, h2, 1e-6) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("total_correlation matches the independent SVD oracle", "[cca]") {
  auto h1 = random_matrix(3, 40, 18);
  auto h2 = random_matrix(3, 40, 19);
  const double r1 = 1e-3;
  const double tc = total_correlation(h1, h2, r1);
  const Eigen::MatrixXd t = whitened_cross(estimate_covariances(h1, h2, r1));
  REQUIRE(tc ==
          Catch::Approx(static_cast<double>(oracles::jacobi_trace_norm(t)))
              .margin(1e-10));
}

TEST_CASE("total_correlation is symmetric and bounded by o", "[cca]") {
  auto h1 = random_matrix(3, 50, 20);
  auto h2 = random_matrix(3, 50, 21);
  REQUIRE(total_correlation(h1, h2, 1e-5) ==
          Catch::Approx(total_correlation(h2, h1, 1e-5)).margin(1e-10));
  REQUIRE(total_correlation(h1, h2, 0.0) <= 3.0 + 1e-9);
}
