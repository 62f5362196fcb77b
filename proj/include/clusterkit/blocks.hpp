#pragma once

#include <Eigen/Dense>
#include <vector>

#include "clusterkit/dataset.hpp"

namespace clusterkit {

// Per-cluster cross-products; the computational substrate for every
// estimator here. Totals are accumulated from the per-cluster blocks in
// cluster order so that sum_g xtx_g == xtx bit for bit.
struct ClusterBlocks {
  std::vector<Eigen::MatrixXd> xtx_g;
  std::vector<Eigen::VectorXd> xty_g;
  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> rows_g;
  Eigen::MatrixXd xtx;
  Eigen::VectorXd xty;
  std::ptrdiff_t n_obs = 0;

  int n_clusters() const { return static_cast<int>(xtx_g.size()); }
  std::ptrdiff_t n_coef() const { return xtx.rows(); }
  std::ptrdiff_t cluster_size(int g) const {
    return rows_g[g].second - rows_g[g].first;
  }
};

ClusterBlocks build_blocks(const ClusteredDataset& d);

// Blocks for the same rows grouped by an arbitrary label vector (used for
// the second clustering dimension and for intersections). `labels` must be
// dense 0..C-1 but need not be contiguous; rows_g is left empty.
ClusterBlocks build_blocks_by(const ClusteredDataset& d,
                              const std::vector<int>& labels);

}  // namespace clusterkit
