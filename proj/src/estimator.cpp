#include "clusterkit/estimator.hpp"

#include <cmath>

#include "clusterkit/errors.hpp"

namespace clusterkit {

namespace {
constexpr double kPivotTol = 1e-10;

bool pivots_ok(const Eigen::VectorXd& d) {
  double mx = 0.0;
  for (std::ptrdiff_t i = 0; i < d.size(); ++i)
    mx = std::max(mx, std::fabs(d(i)));
  if (mx == 0.0) return false;
  for (std::ptrdiff_t i = 0; i < d.size(); ++i)
    if (!(d(i) > kPivotTol * mx)) return false;
  return true;
}
}  // namespace

bool ldlt_full_rank(const Eigen::LDLT<Eigen::MatrixXd>& f) {
  return f.info() == Eigen::Success && pivots_ok(f.vectorD());
}

Eigen::LDLT<Eigen::MatrixXd> checked_ldlt(const Eigen::MatrixXd& m,
                                          const char* context) {
  Eigen::LDLT<Eigen::MatrixXd> f(m);
  if (!ldlt_full_rank(f)) throw err_rank_deficient(context);
  return f;
}

FitResult ols_fit(const ClusteredDataset& d, const ClusterBlocks& b) {
  FitResult f;
  f.xtx_factor = checked_ldlt(b.xtx, "X'X is rank deficient");
  f.beta_hat = f.xtx_factor.solve(b.xty);
  f.residuals = d.y - d.X * f.beta_hat;
  const int G = b.n_clusters();
  f.scores.reserve(G);
  for (int g = 0; g < G; ++g)
    f.scores.push_back(b.xty_g[g] - b.xtx_g[g] * f.beta_hat);
  return f;
}

Eigen::VectorXd restricted_beta(const ClusterBlocks& b, const Restriction& r) {
  const std::ptrdiff_t k = b.n_coef();
  const int j = r.coef_index;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  beta(j) = r.value;
  if (k > 1) {
    // Reduced normal equations straight off the blocks:
    // (X1'X1) b1 = X1'y - b0j X1'x_j.
    std::vector<std::ptrdiff_t> keep;
    for (std::ptrdiff_t c = 0; c < k; ++c)
      if (c != j) keep.push_back(c);
    Eigen::MatrixXd a(k - 1, k - 1);
    Eigen::VectorXd rhs(k - 1);
    for (std::size_t p = 0; p < keep.size(); ++p) {
      rhs(p) = b.xty(keep[p]) - r.value * b.xtx(keep[p], j);
      for (std::size_t q = 0; q < keep.size(); ++q)
        a(p, q) = b.xtx(keep[p], keep[q]);
    }
    const auto f = checked_ldlt(a, "restricted design is rank deficient");
    const Eigen::VectorXd b1 = f.solve(rhs);
    for (std::size_t p = 0; p < keep.size(); ++p) beta(keep[p]) = b1(p);
  }
  return beta;
}

RestrictedFit restricted_fit(const ClusteredDataset& d, const ClusterBlocks& b,
                             const Restriction& r) {
  RestrictedFit rf;
  rf.restriction = r;
  rf.beta_tilde = restricted_beta(b, r);
  rf.residuals_tilde = d.y - d.X * rf.beta_tilde;
  const int G = b.n_clusters();
  rf.scores_tilde.reserve(G);
  for (int g = 0; g < G; ++g)
    rf.scores_tilde.push_back(b.xty_g[g] - b.xtx_g[g] * rf.beta_tilde);
  return rf;
}

JackknifeFactors::JackknifeFactors(const ClusterBlocks& b) {
  const int G = b.n_clusters();
  factors_.reserve(G);
  computable_.reserve(G);
  for (int g = 0; g < G; ++g) {
    factors_.emplace_back(Eigen::MatrixXd(b.xtx - b.xtx_g[g]));
    computable_.push_back(ldlt_full_rank(factors_.back()) ? 1 : 0);
  }
}

JackknifeSet JackknifeFactors::estimates(const ClusterBlocks& b,
                                         const Eigen::VectorXd& xty) const {
  const int G = b.n_clusters();
  JackknifeSet jk;
  jk.beta_g.resize(G);
  jk.computable = computable_;
  for (int g = 0; g < G; ++g) {
    if (!computable_[g]) continue;
    jk.beta_g[g] = factors_[g].solve(xty - b.xty_g[g]);
  }
  if (jk.n_computable() == 0) throw err_all_deletions_singular();
  return jk;
}

JackknifeSet jackknife_estimates(const ClusterBlocks& b, const FitResult&) {
  return JackknifeFactors(b).estimates(b, b.xty);
}

ModifiedScores modified_scores_unrestricted(const ClusterBlocks& b,
                                            const FitResult& f,
                                            const JackknifeSet& jk) {
  const int G = b.n_clusters();
  ModifiedScores ms;
  ms.s.resize(G);
  ms.computable = jk.computable;
  for (int g = 0; g < G; ++g) {
    if (!ms.computable[g]) continue;
    ms.s[g] = b.xtx * (f.beta_hat - jk.beta_g[g]);
  }
  return ms;
}

Eigen::MatrixXd annihilator_block(const Eigen::MatrixXd& x_rows,
                                  const Eigen::LDLT<Eigen::MatrixXd>& factor) {
  const std::ptrdiff_t ng = x_rows.rows();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(ng, ng);
  m.noalias() -= x_rows * factor.solve(x_rows.transpose());
  return m;
}

RestrictedScoreTransform::RestrictedScoreTransform(const ClusteredDataset& d,
                                                   const ClusterBlocks& b,
                                                   int coef_index)
    : coef_index_(coef_index) {
  const std::ptrdiff_t k = b.n_coef();
  const int G = b.n_clusters();
  w_g_.resize(G);
  computable_.assign(G, 1);

  std::vector<std::ptrdiff_t> keep;
  for (std::ptrdiff_t c = 0; c < k; ++c)
    if (c != coef_index) keep.push_back(c);

  Eigen::LDLT<Eigen::MatrixXd> reduced_factor;
  if (!keep.empty()) {
    Eigen::MatrixXd a(keep.size(), keep.size());
    for (std::size_t p = 0; p < keep.size(); ++p)
      for (std::size_t q = 0; q < keep.size(); ++q)
        a(p, q) = b.xtx(keep[p], keep[q]);
    reduced_factor = checked_ldlt(a, "restricted design is rank deficient");
  }

  for (int g = 0; g < G; ++g) {
    auto [lo, hi] = b.rows_g[g];
    const Eigen::MatrixXd xg = d.X.middleRows(lo, hi - lo);
    if (keep.empty()) {
      // No regressors left after the restriction: the annihilator is I.
      w_g_[g] = xg.transpose();
      continue;
    }
    Eigen::MatrixXd xg1(hi - lo, keep.size());
    for (std::size_t p = 0; p < keep.size(); ++p)
      xg1.col(p) = xg.col(keep[p]);
    const Eigen::MatrixXd mgg = annihilator_block(xg1, reduced_factor);
    Eigen::LDLT<Eigen::MatrixXd> mf(mgg);
    if (!ldlt_full_rank(mf)) {
      computable_[g] = 0;
      continue;
    }
    w_g_[g] = mf.solve(xg).transpose();  // (Mr_gg^{-1} X_g)' = X_g' Mr_gg^{-1}
  }
}

ModifiedScores RestrictedScoreTransform::apply(
    const ClusteredDataset& d, const Eigen::VectorXd& residuals_tilde) const {
  const int G = d.n_clusters();
  ModifiedScores ms;
  ms.s.resize(G);
  ms.computable = computable_;
  for (int g = 0; g < G; ++g) {
    if (!computable_[g]) continue;
    auto [lo, hi] = d.cluster_range(g);
    ms.s[g] = w_g_[g] * residuals_tilde.segment(lo, hi - lo);
  }
  return ms;
}

ModifiedScores modified_scores_restricted(const ClusteredDataset& d,
                                          const ClusterBlocks& b,
                                          const RestrictedFit& rf) {
  return RestrictedScoreTransform(d, b, rf.restriction.coef_index)
      .apply(d, rf.residuals_tilde);
}

}  // namespace clusterkit
