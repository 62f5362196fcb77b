#include <doctest.h>

#include <cmath>
#include <map>

#include "clusterkit/rng.hpp"
#include "clusterkit/simulate.hpp"
#include "clusterkit/twoway.hpp"
#include "support.hpp"

using namespace clusterkit;

namespace {

// Random N-observation design on a GxH grid of cluster intersections.
ClusteredDataset grid_instance(int G, int H, int per_cell,
                               std::uint64_t seed) {
  CounterRng rng(seed, 8);
  const int N = G * H * per_cell;
  Eigen::MatrixXd X(N, 2);
  Eigen::VectorXd y(N);
  std::vector<int> c1(N), c2(N);
  int i = 0;
  for (int g = 0; g < G; ++g)
    for (int h = 0; h < H; ++h)
      for (int r = 0; r < per_cell; ++r) {
        X(i, 0) = 1.0;
        X(i, 1) = rng.next_normal();
        y(i) = 0.5 * X(i, 1) + rng.next_normal();
        c1[i] = g;
        c2[i] = h;
        ++i;
      }
  return make_dataset(y, X, c1, c2);
}

// Dense oracle: explicit label loops and an explicit matrix inverse.
Eigen::MatrixXd dense_twoway(const ClusteredDataset& d) {
  const Eigen::MatrixXd xtx_inv = (d.X.transpose() * d.X).inverse();
  const Eigen::VectorXd beta = xtx_inv * d.X.transpose() * d.y;
  const Eigen::VectorXd u = d.y - d.X * beta;
  const double n = static_cast<double>(d.n_obs());
  const double k = static_cast<double>(d.n_coef());

  auto filling_for = [&](const std::vector<int>& labels) {
    int C = 0;
    for (int c : labels) C = std::max(C, c + 1);
    std::vector<Eigen::VectorXd> s(C, Eigen::VectorXd::Zero(d.n_coef()));
    for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i)
      s[labels[i]] += d.X.row(i).transpose() * u(i);
    Eigen::MatrixXd fill = Eigen::MatrixXd::Zero(d.n_coef(), d.n_coef());
    for (int c = 0; c < C; ++c) fill += s[c] * s[c].transpose();
    const double scalar =
        C > 1 ? C * (n - 1.0) / ((C - 1.0) * (n - k)) : 1.0;
    return Eigen::MatrixXd(scalar * fill);
  };

  std::map<std::pair<int, int>, int> ids;
  std::vector<int> inter(d.n_obs());
  for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i) {
    auto key = std::make_pair(d.cluster_id[i], d.cluster_id2[i]);
    auto [it, _] = ids.emplace(key, static_cast<int>(ids.size()));
    inter[i] = it->second;
  }
  const Eigen::MatrixXd fill = filling_for(d.cluster_id) +
                               filling_for(d.cluster_id2) -
                               filling_for(inter);
  return xtx_inv * fill * xtx_inv;
}

}  // namespace

TEST_CASE("coincident partitions collapse to one-way") {
  const auto base = testkit::random_instance(510, 6, 5, 2);
  auto d = base;
  d.cluster_id2 = d.cluster_id;  // dimension 2 identical to dimension 1
  d.cluster2_labels = d.cluster_labels;
  const auto b = build_blocks(d);
  const auto f = ols_fit(d, b);
  const auto tw = twoway_variance(d, f);
  // sigma_g + sigma_h - sigma_gh with all three equal leaves sigma_g.
  CHECK(tw.combined_filling == tw.sigma_g);
  CHECK(tw.psd_flag);

  const auto choice = robust_max_se(d, f, 1);
  CHECK(choice.source == "twoway");
  CHECK(choice.se_dim1 == doctest::Approx(choice.se_dim2).epsilon(1e-14));
  REQUIRE(choice.se_twoway.has_value());
  CHECK(*choice.se_twoway == doctest::Approx(choice.se_dim1).epsilon(1e-12));
}

TEST_CASE("singleton intersections carry the HC-style filling") {
  const auto d = grid_instance(4, 3, 1, 600);  // every cell one observation
  const auto b = build_blocks(d);
  const auto f = ols_fit(d, b);
  const auto tw = twoway_variance(d, f);
  const double n = static_cast<double>(d.n_obs());
  const double k = 2.0;
  Eigen::MatrixXd oracle = Eigen::MatrixXd::Zero(2, 2);
  for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i)
    oracle += f.residuals(i) * f.residuals(i) * d.X.row(i).transpose() *
              d.X.row(i);
  oracle *= n * (n - 1.0) / ((n - 1.0) * (n - k));
  CHECK(testkit::max_rel_err(tw.sigma_gh, oracle) < 1e-12);
  CHECK(tw.n_intersections == 12);
}

TEST_CASE("random grid matches the dense three-term oracle") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto d = grid_instance(5, 5, 2, seed);
    const auto b = build_blocks(d);
    const auto f = ols_fit(d, b);
    const auto tw = twoway_variance(d, f);
    CHECK(testkit::max_rel_err(tw.matrix, dense_twoway(d)) < 1e-12);
  }
}

TEST_CASE("max rule never falls below either one-way se") {
  for (std::uint64_t seed = 700; seed < 750; ++seed) {
    const auto d = grid_instance(4, 3, 2, seed);
    const auto b = build_blocks(d);
    const auto f = ols_fit(d, b);
    const auto choice = robust_max_se(d, f, 1);
    CHECK(choice.test.se >= choice.se_dim1);
    CHECK(choice.test.se >= choice.se_dim2);
    CHECK(choice.test.dof == std::min(4, 3) - 1.0);
  }
}

TEST_CASE("swapping the two dimensions leaves the combined matrix unchanged") {
  const auto d = grid_instance(4, 6, 2, 81);
  const auto b = build_blocks(d);
  const auto f = ols_fit(d, b);
  const auto tw1 = twoway_variance(d, f);

  const auto swapped = make_dataset(d.y, d.X, d.cluster_id2, d.cluster_id);
  const auto b2 = build_blocks(swapped);
  const auto f2 = ols_fit(swapped, b2);
  const auto tw2 = twoway_variance(swapped, f2);
  CHECK(testkit::max_rel_err(tw1.matrix, tw2.matrix) < 1e-12);
}

TEST_CASE("a single cluster in dimension 2 contributes a zero filling") {
  const auto base = testkit::random_instance(910, 6, 5, 2);
  auto d = base;
  d.cluster_id2.assign(d.n_obs(), 0);  // one big cluster
  d.cluster2_labels = {"all"};
  const auto b = build_blocks(d);
  const auto f = ols_fit(d, b);
  const auto tw = twoway_variance(d, f);
  // sum_g s_g = 0, so sigma_h is the outer product of a zero vector.
  CHECK(tw.sigma_h.cwiseAbs().maxCoeff() <
        1e-18 * std::max(1.0, tw.sigma_g.cwiseAbs().maxCoeff()));
  CHECK(testkit::max_rel_err(tw.combined_filling,
                             Eigen::MatrixXd(tw.sigma_g - tw.sigma_gh)) <
        1e-12);
}

TEST_CASE("one-dimension clustering: the max rule tracks the first dimension") {
  // Scores clustered in dimension 1 only; dimension 2 labels cut across.
  // On average the chosen se should be close to the dimension-1 one.
  const int G = 8, H = 6, per = 2, R = 300;
  double sum_chosen = 0.0, sum_dim1 = 0.0;
  for (int rep = 0; rep < R; ++rep) {
    const int N = G * H * per;
    std::vector<long> sizes(G, H * per);
    const Eigen::VectorXd u =
        generate_re_disturbances(sizes, 0.5, 4000, rep);
    CounterRng rng(4100 + rep, 2);
    Eigen::MatrixXd X(N, 2);
    std::vector<int> c1(N), c2(N);
    for (int i = 0; i < N; ++i) {
      X(i, 0) = 1.0;
      X(i, 1) = rng.next_normal();
      c1[i] = i / (H * per);
      c2[i] = i % H;  // orthogonal to the random-effects dimension
    }
    const Eigen::VectorXd y = 0.3 * X.col(1) + u;
    const auto d = make_dataset(y, X, c1, c2);
    const auto b = build_blocks(d);
    const auto f = ols_fit(d, b);
    const auto choice = robust_max_se(d, f, 1);
    sum_chosen += choice.test.se;
    sum_dim1 += choice.se_dim1;
  }
  CHECK(std::fabs(sum_chosen / sum_dim1 - 1.0) < 0.05);
}
