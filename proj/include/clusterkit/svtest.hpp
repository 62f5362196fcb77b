#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "clusterkit/blocks.hpp"
#include "clusterkit/dataset.hpp"
#include "clusterkit/estimator.hpp"

namespace clusterkit {

// Fine clusters nested inside coarse clusters (both per-observation,
// dense labels). Construction verifies the nesting.
struct NestedClustering {
  std::vector<int> coarse;
  std::vector<int> fine;
  std::vector<int> coarse_of_fine;  // coarse id for each fine cluster
  int n_coarse = 0;
  int n_fine = 0;
};

NestedClustering make_nested(const std::vector<int>& coarse,
                             const std::vector<int>& fine);

struct SvResult {
  double theta_hat = 0.0;
  std::vector<double> theta_g;      // per-coarse contributions
  double sv_stat = 0.0;             // NaN when degenerate
  double p_asymptotic = 1.0;        // one-sided upper tail, N(0,1)
  std::optional<double> p_bootstrap;
  bool degenerate = false;          // every coarse cluster has one fine
  long bootstrap_B = 0;
};

// Residual of x_j regressed on the other columns. Throws
// ZeroPartialVariance when x_j is collinear with the rest.
Eigen::VectorXd partial_out(const ClusteredDataset& d, const ClusterBlocks& b,
                            int j);

// Tests the null of fine clustering against coarse clustering for
// coefficient j, from the fine-cluster score sums of the partialed
// regressor. Both variance estimates share the scale 1/N.
SvResult score_variance_test(const ClusteredDataset& d,
                             const NestedClustering& nest, int j);

// Same statistic with a bootstrap P value; the bootstrap samples are
// unrestricted wild datasets with Rademacher draws at the fine level.
SvResult score_variance_bootstrap(const ClusteredDataset& d,
                                  const NestedClustering& nest, int j, long B,
                                  std::uint64_t seed, int threads = 1);

}  // namespace clusterkit
