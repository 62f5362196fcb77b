#include "clusterkit/blocks.hpp"

#include <algorithm>

namespace clusterkit {

ClusterBlocks build_blocks(const ClusteredDataset& d) {
  const int G = d.n_clusters();
  const std::ptrdiff_t k = d.n_coef();
  ClusterBlocks b;
  b.n_obs = d.n_obs();
  b.xtx_g.reserve(G);
  b.xty_g.reserve(G);
  b.rows_g.reserve(G);
  b.xtx = Eigen::MatrixXd::Zero(k, k);
  b.xty = Eigen::VectorXd::Zero(k);
  for (int g = 0; g < G; ++g) {
    auto [lo, hi] = d.cluster_range(g);
    const auto Xg = d.X.middleRows(lo, hi - lo);
    const auto yg = d.y.segment(lo, hi - lo);
    Eigen::MatrixXd xtx_g = Xg.transpose() * Xg;
    Eigen::VectorXd xty_g = Xg.transpose() * yg;
    b.xtx += xtx_g;
    b.xty += xty_g;
    b.xtx_g.push_back(std::move(xtx_g));
    b.xty_g.push_back(std::move(xty_g));
    b.rows_g.emplace_back(lo, hi);
  }
  return b;
}

ClusterBlocks build_blocks_by(const ClusteredDataset& d,
                              const std::vector<int>& labels) {
  int C = 0;
  for (int c : labels) C = std::max(C, c + 1);
  const std::ptrdiff_t k = d.n_coef();
  ClusterBlocks b;
  b.n_obs = d.n_obs();
  b.xtx_g.assign(C, Eigen::MatrixXd::Zero(k, k));
  b.xty_g.assign(C, Eigen::VectorXd::Zero(k));
  for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i) {
    const int c = labels[i];
    b.xtx_g[c].noalias() += d.X.row(i).transpose() * d.X.row(i);
    b.xty_g[c].noalias() += d.X.row(i).transpose() * d.y(i);
  }
  b.xtx = Eigen::MatrixXd::Zero(k, k);
  b.xty = Eigen::VectorXd::Zero(k);
  for (int c = 0; c < C; ++c) {
    b.xtx += b.xtx_g[c];
    b.xty += b.xty_g[c];
  }
  return b;
}

}  // namespace clusterkit
