#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "swedge/rng.hpp"
#include "swedge/structured_cov.hpp"
#include "test_util.hpp"

using namespace swedge;

namespace {

Eigen::MatrixXd materialize(const StructuredInverse& inv) {
  const long M = inv.total();
  Eigen::MatrixXd out(M, M);
  Eigen::VectorXd col;
  for (long k = 0; k < M; ++k) {
    inv.apply(Eigen::VectorXd::Unit(M, k), col);
    out.col(k) = col;
  }
  return out;
}

VarianceComponents random_vc(Rng& rng) {
  VarianceComponents vc;
  vc.sigma2 = 0.2 + 1.8 * rng.uniform();
  vc.tau2 = rng.uniform() < 0.2 ? 0.0 : 1.5 * rng.uniform();
  vc.kappa2 = rng.uniform() < 0.2 ? 0.0 : 1.5 * rng.uniform();
  return vc;
}

std::vector<int> random_sizes(Rng& rng, int max_total = 12) {
  const int J = rng.uniform_int(1, 4);
  std::vector<int> sizes(static_cast<std::size_t>(J));
  int budget = max_total;
  bool any = false;
  for (auto& n : sizes) {
    n = rng.uniform_int(0, std::min(4, budget));
    budget -= n;
    any = any || n > 0;
  }
  if (!any) sizes[0] = 1;
  return sizes;
}

}  // namespace

TEST_CASE("independence gives the scaled identity") {
  const StructuredInverse inv({2}, {1.0, 0.0, 0.0});
  const Eigen::MatrixXd dense = materialize(inv);
  CHECK(dense.isApprox(Eigen::MatrixXd::Identity(2, 2), 1e-14));
  CHECK(inv.logdet() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("2x2 exchangeable block inverts as [[2/3,-1/3],[-1/3,2/3]]") {
  // dense covariance [[2,1],[1,2]], inverted by hand
  const StructuredInverse inv({2}, {1.0, 1.0, 0.0});
  const Eigen::MatrixXd dense = materialize(inv);
  CHECK(dense(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(dense(0, 1) == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
  CHECK(dense(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(inv.logdet() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("two-period example matches the dense oracle") {
  const std::vector<int> sizes{3, 2};
  const VarianceComponents vc{0.9, 0.1, 0.05};
  const StructuredInverse inv(sizes, vc);
  const Eigen::MatrixXd oracle = testutil::dense_inverse(sizes, vc);
  CHECK((materialize(inv) - oracle).cwiseAbs().maxCoeff() < 1e-10);
  const auto dense_ld = std::log(dense_observed_cov(sizes, vc).determinant());
  CHECK(inv.logdet() == doctest::Approx(dense_ld).epsilon(1e-10));
}

TEST_CASE("singleton independence logdet is zero") {
  CHECK(logdet_observed_cov({1}, {1.0, 0.0, 0.0}) == doctest::Approx(0.0));
}

TEST_CASE("random draws match the dense oracle") {
  Rng rng(20250811);
  for (int trial = 0; trial < 200; ++trial) {
    const auto sizes = random_sizes(rng);
    const auto vc = random_vc(rng);
    const StructuredInverse inv(sizes, vc);
    const Eigen::MatrixXd cov = dense_observed_cov(sizes, vc);
    const Eigen::MatrixXd prod = materialize(inv) * cov;
    CHECK((prod - Eigen::MatrixXd::Identity(prod.rows(), prod.cols())).cwiseAbs().maxCoeff() <
          1e-10);
    const double ld = std::log(cov.determinant());
    CHECK(std::abs(inv.logdet() - ld) < 1e-9 * std::max(1.0, std::abs(ld)));
  }
}

TEST_CASE("quadratic forms, traces and block sums agree with dense algebra") {
  Rng rng(7);
  SUBCASE("pinned examples") {
    // independence: 1' I 1 = M
    const StructuredInverse ind({2, 3}, {1.0, 0.0, 0.0});
    const Eigen::VectorXd ones5 = Eigen::VectorXd::Ones(5);
    CHECK(ind.quadratic_form(ones5, ones5) == doctest::Approx(5.0));
    // exchangeable 2x2: 1' Sigma^{-1} 1 with Sigma=[[2,1],[1,2]]
    const StructuredInverse ex({2}, {1.0, 1.0, 0.0});
    const Eigen::VectorXd ones2 = Eigen::VectorXd::Ones(2);
    CHECK(ex.quadratic_form(ones2, ones2) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("random against dense") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto sizes = random_sizes(rng);
      const auto vc = random_vc(rng);
      const StructuredInverse inv(sizes, vc);
      const long M = inv.total();
      Eigen::VectorXd u(M), v(M);
      for (long i = 0; i < M; ++i) {
        u(i) = rng.normal();
        v(i) = rng.normal();
      }
      const Eigen::MatrixXd oracle = testutil::dense_inverse(sizes, vc);
      CHECK(inv.quadratic_form(u, v) ==
            doctest::Approx(u.dot(oracle * v)).epsilon(1e-10));
      CHECK(inv.quadratic_form(u, v) == doctest::Approx(inv.quadratic_form(v, u)));
      CHECK((inv.apply(v) - oracle * v).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(inv.trace() == doctest::Approx(oracle.trace()).epsilon(1e-10));
      CHECK(inv.one_inv_one() ==
            doctest::Approx(Eigen::VectorXd::Ones(M).dot(oracle * Eigen::VectorXd::Ones(M)))
                .epsilon(1e-10));
      // tr(inv * blockdiag{11'})
      Eigen::MatrixXd bd = Eigen::MatrixXd::Zero(M, M);
      long off = 0;
      for (int n : sizes) {
        bd.block(off, off, n, n).setOnes();
        off += n;
      }
      CHECK(inv.trace_blockdiag_ones() == doctest::Approx((oracle * bd).trace()).epsilon(1e-10));
    }
  }
  SUBCASE("apply is linear") {
    const StructuredInverse inv({2, 2}, {0.7, 0.3, 0.2});
    Eigen::VectorXd a(4), b(4);
    a << 1, -2, 0.5, 3;
    b << 0.2, 0.1, -1, 2;
    CHECK((inv.apply(a + 2.0 * b) - (inv.apply(a) + 2.0 * inv.apply(b))).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("logdet grows with sigma2") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sizes = random_sizes(rng);
    auto vc = random_vc(rng);
    const double base = logdet_observed_cov(sizes, vc);
    vc.sigma2 += 0.5;
    CHECK(logdet_observed_cov(sizes, vc) > base);
  }
}

TEST_CASE("invalid inputs are rejected") {
  CHECK_THROWS(StructuredInverse({0, 0}, {1.0, 0.0, 0.0}));
  CHECK_THROWS(StructuredInverse({2}, {0.0, 0.0, 0.0}));
  CHECK_THROWS(StructuredInverse({2}, {1.0, -0.1, 0.0}));
  const StructuredInverse inv({2}, {1.0, 0.0, 0.0});
  CHECK_THROWS(inv.quadratic_form(Eigen::VectorXd::Ones(3), Eigen::VectorXd::Ones(2)));
}
