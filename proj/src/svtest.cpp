#include "clusterkit/svtest.hpp"

#include <cmath>
#include <limits>

#include "clusterkit/errors.hpp"
#include "clusterkit/parallel.hpp"
#include "clusterkit/rng.hpp"
#include "clusterkit/stats.hpp"

namespace clusterkit {

namespace {

constexpr std::uint64_t kSvBootTag = 0x73767462;

struct SvCore {
  double theta_hat;
  std::vector<double> theta_g;
  double sv_stat;  // NaN when the denominator vanishes
};

// theta and its per-coarse pieces from observation products z_i * u_i.
SvCore sv_statistic(const Eigen::VectorXd& zu, const NestedClustering& nest) {
  const double m = 1.0 / static_cast<double>(zu.size());
  std::vector<double> fine_score(nest.n_fine, 0.0);
  for (std::ptrdiff_t i = 0; i < zu.size(); ++i)
    fine_score[nest.fine[i]] += zu(i);
  std::vector<double> coarse_sum(nest.n_coarse, 0.0);
  std::vector<double> coarse_sumsq(nest.n_coarse, 0.0);
  for (int h = 0; h < nest.n_fine; ++h) {
    const int g = nest.coarse_of_fine[h];
    coarse_sum[g] += fine_score[h];
    coarse_sumsq[g] += fine_score[h] * fine_score[h];
  }
  SvCore core;
  core.theta_g.resize(nest.n_coarse);
  core.theta_hat = 0.0;
  double denom_sq = 0.0;
  for (int g = 0; g < nest.n_coarse; ++g) {
    core.theta_g[g] = m * (coarse_sum[g] * coarse_sum[g] - coarse_sumsq[g]);
    core.theta_hat += core.theta_g[g];
    denom_sq += core.theta_g[g] * core.theta_g[g];
  }
  core.sv_stat = denom_sq > 0.0
                     ? core.theta_hat / std::sqrt(denom_sq)
                     : std::numeric_limits<double>::quiet_NaN();
  return core;
}

}  // namespace

NestedClustering make_nested(const std::vector<int>& coarse,
                             const std::vector<int>& fine) {
  NestedClustering nest;
  nest.coarse = coarse;
  nest.fine = fine;
  for (int c : coarse) nest.n_coarse = std::max(nest.n_coarse, c + 1);
  for (int c : fine) nest.n_fine = std::max(nest.n_fine, c + 1);
  nest.coarse_of_fine.assign(nest.n_fine, -1);
  for (std::size_t i = 0; i < fine.size(); ++i) {
    int& owner = nest.coarse_of_fine[fine[i]];
    if (owner == -1)
      owner = coarse[i];
    else if (owner != coarse[i])
      throw err_not_nested(std::to_string(fine[i]));
  }
  return nest;
}

Eigen::VectorXd partial_out(const ClusteredDataset& d, const ClusterBlocks& b,
                            int j) {
  const std::ptrdiff_t k = b.n_coef();
  if (k == 1) return d.X.col(j);
  std::vector<std::ptrdiff_t> keep;
  for (std::ptrdiff_t c = 0; c < k; ++c)
    if (c != j) keep.push_back(c);
  Eigen::MatrixXd a(keep.size(), keep.size());
  Eigen::VectorXd rhs(keep.size());
  for (std::size_t p = 0; p < keep.size(); ++p) {
    rhs(p) = b.xtx(keep[p], j);
    for (std::size_t q = 0; q < keep.size(); ++q)
      a(p, q) = b.xtx(keep[p], keep[q]);
  }
  const auto f = checked_ldlt(a, "partialing design is rank deficient");
  const Eigen::VectorXd gamma = f.solve(rhs);
  Eigen::VectorXd z = d.X.col(j);
  for (std::size_t p = 0; p < keep.size(); ++p)
    z -= gamma(p) * d.X.col(keep[p]);
  if (!(z.squaredNorm() > 1e-24 * d.X.col(j).squaredNorm()))
    throw err_zero_partial_variance(j);
  return z;
}

SvResult score_variance_test(const ClusteredDataset& d,
                             const NestedClustering& nest, int j) {
  const ClusterBlocks b = build_blocks(d);
  const FitResult f = ols_fit(d, b);
  const Eigen::VectorXd z = partial_out(d, b, j);

  SvResult r;
  r.degenerate = nest.n_fine == nest.n_coarse;
  const SvCore core = sv_statistic(z.cwiseProduct(f.residuals), nest);
  r.theta_hat = core.theta_hat;
  r.theta_g = core.theta_g;
  if (r.degenerate) {
    r.sv_stat = std::numeric_limits<double>::quiet_NaN();
    r.p_asymptotic = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.sv_stat = core.sv_stat;
  r.p_asymptotic = 1.0 - normal_cdf(r.sv_stat);
  return r;
}

SvResult score_variance_bootstrap(const ClusteredDataset& d,
                                  const NestedClustering& nest, int j, long B,
                                  std::uint64_t seed, int threads) {
  SvResult r = score_variance_test(d, nest, j);
  if (r.degenerate) return r;

  const ClusterBlocks b = build_blocks(d);
  const FitResult f = ols_fit(d, b);
  const Eigen::VectorXd z = partial_out(d, b, j);
  const Eigen::VectorXd fitted = d.y - f.residuals;

  std::vector<double> stat_star(B);
  parallel_for(static_cast<std::size_t>(B), threads, [&](std::size_t bi) {
    const std::uint64_t stream =
        stream_id(kSvBootTag, static_cast<std::uint64_t>(bi));
    // Rademacher draw per fine cluster; wild dataset y* = Xb + v u.
    Eigen::VectorXd ustar(d.n_obs());
    for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i) {
      const double v =
          (draw_u64_at(seed, stream, nest.fine[i]) >> 63) ? 1.0 : -1.0;
      ustar(i) = v * f.residuals(i);
    }
    const Eigen::VectorXd ystar = fitted + ustar;
    const Eigen::VectorXd beta_star =
        f.xtx_factor.solve(d.X.transpose() * ystar);
    const Eigen::VectorXd resid_star = ystar - d.X * beta_star;
    stat_star[bi] = sv_statistic(z.cwiseProduct(resid_star), nest).sv_stat;
  });

  long exceed = 0;
  for (long bi = 0; bi < B; ++bi)
    if (stat_star[bi] >= r.sv_stat) ++exceed;
  r.p_bootstrap = static_cast<double>(exceed) / static_cast<double>(B);
  r.bootstrap_B = B;
  return r;
}

}  // namespace clusterkit
