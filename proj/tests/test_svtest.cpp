#include <doctest.h>

#include <cmath>
#include <numeric>

#include "clusterkit/errors.hpp"
#include "clusterkit/rng.hpp"
#include "clusterkit/simulate.hpp"
#include "clusterkit/svtest.hpp"
#include "support.hpp"

using namespace clusterkit;

namespace {

// Balanced nested design: G coarse clusters x M fine each x n obs, with
// X = [1, x]. Disturbances come from the caller.
struct NestedFixture {
  ClusteredDataset data;
  NestedClustering nest;
};

NestedFixture nested_fixture(int G, int M, int n, const Eigen::VectorXd& u,
                             std::uint64_t xseed) {
  const int N = G * M * n;
  CounterRng rng(xseed, 3);
  Eigen::MatrixXd X(N, 2);
  std::vector<int> coarse(N), fine(N), cid(N);
  for (int i = 0; i < N; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.next_normal();
    coarse[i] = i / (M * n);
    fine[i] = i / n;
    cid[i] = fine[i];
  }
  const Eigen::VectorXd y = 0.7 * X.col(1) + u;
  NestedFixture fx{make_dataset(y, X, cid, coarse), {}};
  fx.nest = make_nested(fx.data.cluster_id2, fx.data.cluster_id);
  return fx;
}

Eigen::VectorXd fine_re(int G, int M, int n, double rho, std::uint64_t seed,
                        long rep) {
  std::vector<long> sizes(G * M, n);
  return generate_re_disturbances(sizes, rho, seed, rep);
}

}  // namespace

TEST_CASE("nesting violations are rejected") {
  CHECK_THROWS_AS(make_nested({0, 1}, {0, 0}), DataError);
  const auto nest = make_nested({0, 0, 1, 1}, {0, 1, 2, 3});
  CHECK(nest.n_coarse == 2);
  CHECK(nest.n_fine == 4);
}

TEST_CASE("degenerate nesting: one fine cluster per coarse cluster") {
  const Eigen::VectorXd u = fine_re(6, 1, 4, 0.2, 5, 0);
  const auto fx = nested_fixture(6, 1, 4, u, 9);
  const auto r = score_variance_test(fx.data, fx.nest, 1);
  CHECK(r.degenerate);
  CHECK(r.theta_hat == 0.0);  // the two sums coincide term by term
  CHECK(std::isnan(r.sv_stat));
}

TEST_CASE("statistic is exactly scale invariant") {
  const Eigen::VectorXd u = fine_re(8, 3, 4, 0.3, 21, 0);
  const auto fx = nested_fixture(8, 3, 4, u, 22);
  const auto r1 = score_variance_test(fx.data, fx.nest, 1);

  auto scaled = fx.data;
  scaled.y *= 4.0;  // power of two: exact in floating point
  const auto r4 = score_variance_test(scaled, fx.nest, 1);
  CHECK(r4.sv_stat == r1.sv_stat);

  auto scaled3 = fx.data;
  scaled3.y *= 3.0;
  const auto r3 = score_variance_test(scaled3, fx.nest, 1);
  CHECK(testkit::rel_err(r3.sv_stat, r1.sv_stat) < 1e-10);
}

TEST_CASE("theta is invariant to coarse relabeling and to the sign of z") {
  const Eigen::VectorXd u = fine_re(6, 2, 5, 0.25, 31, 0);
  const auto fx = nested_fixture(6, 2, 5, u, 32);
  const auto r1 = score_variance_test(fx.data, fx.nest, 1);

  // Reverse coarse labels.
  auto d2 = fx.data;
  for (auto& c : d2.cluster_id2) c = 5 - c;
  const auto nest2 = make_nested(d2.cluster_id2, d2.cluster_id);
  const auto r2 = score_variance_test(d2, nest2, 1);
  CHECK(testkit::rel_err(r2.theta_hat, r1.theta_hat) < 1e-12);

  // Flip the sign of the regressor being tested: z flips, z*u products
  // flip, squares are unchanged.
  auto d3 = fx.data;
  d3.X.col(1) *= -1.0;
  d3.y *= 1.0;
  const auto r3 = score_variance_test(d3, fx.nest, 1);
  CHECK(testkit::rel_err(r3.theta_hat, r1.theta_hat) < 1e-10);
}

TEST_CASE("collinear test regressor raises ZeroPartialVariance") {
  Eigen::MatrixXd X(8, 2);
  for (int i = 0; i < 8; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = 2.0;  // collinear with the intercept
  }
  Eigen::VectorXd y(8);
  y << 1, 2, 3, 4, 5, 6, 7, 8;
  const auto d = make_dataset(y, X, {0, 0, 1, 1, 2, 2, 3, 3},
                              {0, 0, 0, 0, 1, 1, 1, 1});
  const auto nest = make_nested(d.cluster_id2, d.cluster_id);
  CHECK_THROWS_AS(score_variance_test(d, nest, 1), MethodError);
}

TEST_CASE("permutation oracle: reassigning fine clusters kills the signal") {
  // Finite-population expectation of theta over uniform reassignments of
  // fine clusters to coarse groups:
  //   E[theta] = m q ((sum_h s_h)^2 - sum_h s_h^2),
  //   q = sum_g M_g (M_g - 1) / (M (M - 1)).
  const int G = 8, M = 3, n = 4;
  const Eigen::VectorXd u = fine_re(G, M, n, 0.4, 41, 0);  // coarse-free
  const auto fx = nested_fixture(G, M, n, u, 42);
  const auto d = fx.data;

  const auto b = build_blocks(d);
  const auto f = ols_fit(d, b);
  const Eigen::VectorXd z = partial_out(d, b, 1);
  const Eigen::VectorXd zu = z.cwiseProduct(f.residuals);
  const int n_fine = G * M;
  std::vector<double> s(n_fine, 0.0);
  for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i)
    s[fx.nest.fine[i]] += zu(i);
  double sum = 0.0, sumsq = 0.0;
  for (double v : s) {
    sum += v;
    sumsq += v * v;
  }
  const double m = 1.0 / d.n_obs();
  const double q = static_cast<double>(G * M * (M - 1)) /
                   (n_fine * (n_fine - 1.0));
  const double expected = m * q * (sum * sum - sumsq);

  // 1000 random reassignments of fine clusters to coarse groups.
  CounterRng rng(99, 7);
  const int P = 1000;
  double perm_sum = 0.0, perm_sumsq = 0.0;
  std::vector<int> order(n_fine);
  for (int p = 0; p < P; ++p) {
    std::iota(order.begin(), order.end(), 0);
    for (int i = n_fine - 1; i > 0; --i) {
      const int jpick = static_cast<int>(rng.next_below(i + 1));
      std::swap(order[i], order[jpick]);
    }
    double theta = 0.0;
    for (int g = 0; g < G; ++g) {
      double gs = 0.0, gq = 0.0;
      for (int hh = 0; hh < M; ++hh) {
        const double v = s[order[g * M + hh]];
        gs += v;
        gq += v * v;
      }
      theta += m * (gs * gs - gq);
    }
    perm_sum += theta;
    perm_sumsq += theta * theta;
  }
  const double mean = perm_sum / P;
  const double sd = std::sqrt((perm_sumsq / P - mean * mean) / P);
  CHECK(std::fabs(mean - expected) < 3.0 * sd);
  // And the population mean itself is tiny relative to the fine variance.
  CHECK(std::fabs(expected) < 0.2 * m * sumsq);
}

TEST_CASE("bootstrap p value is deterministic") {
  const Eigen::VectorXd u = fine_re(10, 2, 4, 0.2, 61, 0);
  const auto fx = nested_fixture(10, 2, 4, u, 62);
  const auto r1 = score_variance_bootstrap(fx.data, fx.nest, 1, 199, 17, 1);
  const auto r2 = score_variance_bootstrap(fx.data, fx.nest, 1, 199, 17, 4);
  REQUIRE(r1.p_bootstrap.has_value());
  CHECK(*r1.p_bootstrap == *r2.p_bootstrap);
  CHECK(r1.sv_stat == r2.sv_stat);
}

TEST_CASE("null size: fine-clustered data, asymptotic and bootstrap") {
  // Disturbances clustered at the fine level only; the coarse test should
  // reject near its nominal level.
  const int G = 12, M = 3, n = 4, R = 2000;
  long rej_asym = 0, rej_boot = 0;
  for (int rep = 0; rep < R; ++rep) {
    const Eigen::VectorXd u = fine_re(G, M, n, 0.3, 7000, rep);
    const auto fx = nested_fixture(G, M, n, u, 7001);
    const auto r = score_variance_bootstrap(fx.data, fx.nest, 1, 199,
                                            9000 + rep, 1);
    rej_asym += r.p_asymptotic < 0.05;
    rej_boot += *r.p_bootstrap < 0.05;
  }
  const double asym_rate = static_cast<double>(rej_asym) / R;
  const double boot_rate = static_cast<double>(rej_boot) / R;
  CHECK(asym_rate >= 0.02);
  CHECK(asym_rate <= 0.09);
  CHECK(boot_rate >= 0.035);
  CHECK(boot_rate <= 0.065);
}

TEST_CASE("power: a coarse random effect is detected") {
  const int G = 10, M = 4, n = 5, R = 400;
  long rej = 0;
  std::vector<long> coarse_sizes(G, M * n);
  for (int rep = 0; rep < R; ++rep) {
    // Fine noise plus a coarse-level effect of comparable size.
    const Eigen::VectorXd fine_u = fine_re(G, M, n, 0.2, 8100, rep);
    const Eigen::VectorXd coarse_u =
        generate_re_disturbances(coarse_sizes, 0.5, 8200, rep);
    const auto fx = nested_fixture(G, M, n, fine_u + coarse_u, 8300);
    const auto r = score_variance_test(fx.data, fx.nest, 1);
    rej += r.p_asymptotic < 0.05;
  }
  CHECK(static_cast<double>(rej) / R > 0.5);
}

TEST_CASE("school-grade analog: asymptotic p below bootstrap p") {
  // A fixed dataset with a moderate coarse effect; mirrors the reported
  // pattern where the asymptotic test is more aggressive than the
  // bootstrap one.
  const int G = 17, M = 4, n = 8;
  std::vector<long> coarse_sizes(G, M * n);
  const Eigen::VectorXd u = fine_re(G, M, n, 0.2, 555, 3) +
                            generate_re_disturbances(coarse_sizes, 0.35, 556, 3);
  const auto fx = nested_fixture(G, M, n, u, 557);
  const auto r = score_variance_bootstrap(fx.data, fx.nest, 1, 999, 31, 1);
  REQUIRE(r.p_bootstrap.has_value());
  CHECK(r.sv_stat > 0.0);
  CHECK(r.p_asymptotic < *r.p_bootstrap);
}
