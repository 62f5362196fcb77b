#include "clusterkit/twoway.hpp"

#include <cmath>
#include <map>

#include "clusterkit/errors.hpp"

namespace clusterkit {

namespace {

double cv1_scalar(int clusters, double n, double k) {
  if (clusters <= 1) return 1.0;
  return clusters * (n - 1.0) / ((clusters - 1.0) * (n - k));
}

// Score sums per label, filled into sum of outer products.
Eigen::MatrixXd score_filling(const ClusteredDataset& d,
                              const Eigen::VectorXd& residuals,
                              const std::vector<int>& labels, int n_labels) {
  const std::ptrdiff_t k = d.n_coef();
  std::vector<Eigen::VectorXd> s(n_labels, Eigen::VectorXd::Zero(k));
  for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i)
    s[labels[i]].noalias() += d.X.row(i).transpose() * residuals(i);
  Eigen::MatrixXd filling = Eigen::MatrixXd::Zero(k, k);
  for (int c = 0; c < n_labels; ++c)
    filling.noalias() += s[c] * s[c].transpose();
  return filling;
}

}  // namespace

TwoWayVariance twoway_variance(const ClusteredDataset& d, const FitResult& f) {
  if (!d.has_second_dimension())
    throw DataError("MissingCluster2", "two-way variance needs a second "
                                       "cluster dimension");
  const double n = static_cast<double>(d.n_obs());
  const double k = static_cast<double>(d.n_coef());
  const int G = d.n_clusters();
  int H = 0;
  for (int c : d.cluster_id2) H = std::max(H, c + 1);

  // Intersections as dense pair labels.
  std::map<std::pair<int, int>, int> inter_ids;
  std::vector<int> inter(d.n_obs());
  for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i) {
    const auto key = std::make_pair(d.cluster_id[i], d.cluster_id2[i]);
    auto [it, fresh] =
        inter_ids.emplace(key, static_cast<int>(inter_ids.size()));
    (void)fresh;
    inter[i] = it->second;
  }
  const int I = static_cast<int>(inter_ids.size());

  TwoWayVariance tw;
  tw.n_dim1 = G;
  tw.n_dim2 = H;
  tw.n_intersections = I;
  tw.sigma_g = cv1_scalar(G, n, k) *
               score_filling(d, f.residuals, d.cluster_id, G);
  tw.sigma_h = cv1_scalar(H, n, k) *
               score_filling(d, f.residuals, d.cluster_id2, H);
  tw.sigma_gh =
      cv1_scalar(I, n, k) * score_filling(d, f.residuals, inter, I);
  tw.combined_filling = tw.sigma_g + tw.sigma_h - tw.sigma_gh;

  const Eigen::MatrixXd half = f.xtx_factor.solve(tw.combined_filling);
  Eigen::MatrixXd v = f.xtx_factor.solve(half.transpose()).transpose();
  tw.matrix = 0.5 * (v + v.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tw.matrix);
  tw.min_eigenvalue = es.eigenvalues().minCoeff();
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  tw.psd_flag = tw.min_eigenvalue >= -1e-12 * scale;
  return tw;
}

MaxSeChoice robust_max_se(const ClusteredDataset& d, const FitResult& f, int j,
                          double beta0, double alpha) {
  const ClusterBlocks b = build_blocks(d);
  const VarianceEstimate v1 = cv1(b, f);
  const TwoWayVariance tw = twoway_variance(d, f);

  // One-way CV1 in dimension 2: same bread, dimension-2 score filling.
  int H = tw.n_dim2;
  Eigen::MatrixXd fill2 =
      cv1_scalar(H, static_cast<double>(d.n_obs()),
                 static_cast<double>(d.n_coef())) *
      score_filling(d, f.residuals, d.cluster_id2, H);
  const Eigen::MatrixXd half = f.xtx_factor.solve(fill2);
  const Eigen::MatrixXd v2 = f.xtx_factor.solve(half.transpose()).transpose();

  MaxSeChoice choice;
  choice.se_dim1 = std::sqrt(v1.matrix(j, j));
  choice.se_dim2 = std::sqrt(v2(j, j));
  choice.twoway_psd = tw.psd_flag;
  choice.min_eigenvalue = tw.min_eigenvalue;
  if (tw.matrix(j, j) > 0.0) choice.se_twoway = std::sqrt(tw.matrix(j, j));

  double se = std::max(choice.se_dim1, choice.se_dim2);
  choice.source = choice.se_dim1 >= choice.se_dim2 ? "dim1" : "dim2";
  // Exact ties (coincident partitions) go to two-way; the two code paths
  // can differ by rounding, so the comparison carries a relative slack
  // while `se` itself stays the exact maximum.
  if (choice.se_twoway && *choice.se_twoway >= se * (1.0 - 1e-12)) {
    se = std::max(se, *choice.se_twoway);
    choice.source = "twoway";
  }

  VarianceEstimate chosen;
  chosen.matrix = Eigen::MatrixXd::Zero(d.n_coef(), d.n_coef());
  chosen.matrix(j, j) = se * se;
  chosen.kind = VarianceKind::TWOWAY;
  chosen.effective_G = std::min(tw.n_dim1, tw.n_dim2);
  chosen.dof = chosen.effective_G - 1.0;
  choice.test = t_test(chosen, f, j, beta0, alpha);
  choice.test.method = "max(" + choice.source + ")";
  return choice;
}

}  // namespace clusterkit
