#include "clusterkit/crve.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

#include "clusterkit/errors.hpp"
#include "clusterkit/stats.hpp"

namespace clusterkit {

const char* variance_kind_name(VarianceKind k) {
  switch (k) {
    case VarianceKind::CV1: return "CV1";
    case VarianceKind::CV2: return "CV2";
    case VarianceKind::CV3: return "CV3";
    case VarianceKind::HC1: return "HC1";
    case VarianceKind::HC2: return "HC2";
    case VarianceKind::HC3: return "HC3";
    case VarianceKind::TWOWAY: return "TWOWAY";
  }
  return "?";
}

namespace {

Eigen::MatrixXd sandwich(const Eigen::LDLT<Eigen::MatrixXd>& bread,
                         const Eigen::MatrixXd& filling) {
  const Eigen::MatrixXd half = bread.solve(filling);
  Eigen::MatrixXd v = bread.solve(half.transpose()).transpose();
  return 0.5 * (v + v.transpose());  // enforce symmetry
}

}  // namespace

VarianceEstimate cv1(const ClusterBlocks& b, const FitResult& f) {
  const int G = b.n_clusters();
  const double n = static_cast<double>(b.n_obs);
  const double k = static_cast<double>(b.n_coef());
  Eigen::MatrixXd filling = Eigen::MatrixXd::Zero(b.n_coef(), b.n_coef());
  for (int g = 0; g < G; ++g)
    filling.noalias() += f.scores[g] * f.scores[g].transpose();
  filling *= G * (n - 1.0) / ((G - 1.0) * (n - k));
  VarianceEstimate ve;
  ve.matrix = sandwich(f.xtx_factor, filling);
  ve.kind = VarianceKind::CV1;
  ve.effective_G = G;
  ve.dof = G - 1.0;
  return ve;
}

VarianceEstimate cv2(const ClusteredDataset& d, const ClusterBlocks& b,
                     const FitResult& f) {
  const int G = b.n_clusters();
  constexpr double kEigTol = 1e-10;
  std::ptrdiff_t max_ng = 0;
  for (int g = 0; g < G; ++g) max_ng = std::max(max_ng, b.cluster_size(g));
  if (max_ng > 2000)
    std::cerr << "clusterkit: warning: CV2 eigendecomposition on a cluster "
                 "of size "
              << max_ng << " will be slow\n";

  VarianceEstimate ve;
  ve.kind = VarianceKind::CV2;
  ve.effective_G = G;
  ve.dof = G - 1.0;
  Eigen::MatrixXd filling = Eigen::MatrixXd::Zero(b.n_coef(), b.n_coef());
  for (int g = 0; g < G; ++g) {
    auto [lo, hi] = b.rows_g[g];
    const Eigen::MatrixXd xg = d.X.middleRows(lo, hi - lo);
    const Eigen::VectorXd ug = f.residuals.segment(lo, hi - lo);
    const Eigen::MatrixXd mgg = annihilator_block(xg, f.xtx_factor);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mgg);
    const Eigen::VectorXd& ev = es.eigenvalues();
    const double mx = ev.cwiseAbs().maxCoeff();
    Eigen::VectorXd inv_root = Eigen::VectorXd::Zero(ev.size());
    bool flagged = false;
    for (std::ptrdiff_t i = 0; i < ev.size(); ++i) {
      if (ev(i) < kEigTol * std::max(1.0, mx)) {
        flagged = true;  // pseudo-inverse root: drop the direction
      } else {
        inv_root(i) = 1.0 / std::sqrt(ev(i));
      }
    }
    if (flagged) ve.flagged.push_back(g);
    const Eigen::VectorXd rescaled =
        es.eigenvectors() *
        (inv_root.asDiagonal() * (es.eigenvectors().transpose() * ug));
    const Eigen::VectorXd sg = xg.transpose() * rescaled;
    filling.noalias() += sg * sg.transpose();
  }
  ve.matrix = sandwich(f.xtx_factor, filling);
  return ve;
}

VarianceEstimate cv3(const JackknifeSet& jk, const FitResult& f) {
  const int used = jk.n_computable();
  if (used < 2) throw err_too_few_deletions(used);
  const std::ptrdiff_t k = f.beta_hat.size();
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(k, k);
  VarianceEstimate ve;
  for (std::size_t g = 0; g < jk.beta_g.size(); ++g) {
    if (!jk.computable[g]) {
      ve.flagged.push_back(static_cast<int>(g));
      continue;
    }
    const Eigen::VectorXd diff = jk.beta_g[g] - f.beta_hat;
    v.noalias() += diff * diff.transpose();
  }
  v *= (used - 1.0) / used;
  ve.matrix = 0.5 * (v + v.transpose());
  ve.kind = VarianceKind::CV3;
  ve.effective_G = used;
  ve.dof = used - 1.0;
  return ve;
}

TestResult t_test(const VarianceEstimate& ve, const FitResult& f, int j,
                  double beta0j, double alpha) {
  const double var = ve.matrix(j, j);
  if (!(var > 0.0)) throw err_zero_variance(j);
  TestResult t;
  t.coef = f.beta_hat(j);
  t.se = std::sqrt(var);
  t.t_stat = (t.coef - beta0j) / t.se;
  t.dof = ve.dof;
  t.p_value = 2.0 * (1.0 - t_cdf(std::fabs(t.t_stat), ve.dof));
  const double q = t_quantile(1.0 - alpha / 2.0, ve.dof);
  t.ci_lower = t.coef - t.se * q;
  t.ci_upper = t.coef + t.se * q;
  t.method = variance_kind_name(ve.kind);
  return t;
}

VarianceEstimate hc_variance(const ClusteredDataset& d, VarianceKind kind) {
  // Re-cluster as singletons and reuse the cluster machinery.
  ClusteredDataset singl = d;
  singl.cluster_id.resize(d.n_obs());
  std::iota(singl.cluster_id.begin(), singl.cluster_id.end(), 0);
  singl.cluster_labels.clear();
  for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i)
    singl.cluster_labels.push_back(std::to_string(i));
  const ClusterBlocks b = build_blocks(singl);
  const FitResult f = ols_fit(singl, b);
  VarianceEstimate ve;
  switch (kind) {
    case VarianceKind::HC1: ve = cv1(b, f); break;
    case VarianceKind::HC2: ve = cv2(singl, b, f); break;
    case VarianceKind::HC3: ve = cv3(jackknife_estimates(b, f), f); break;
    default: throw err_invalid_plan("hc_variance expects an HC kind");
  }
  ve.kind = kind;
  ve.dof = static_cast<double>(ve.effective_G) - 1.0;
  return ve;
}

}  // namespace clusterkit
