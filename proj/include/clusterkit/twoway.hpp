#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "clusterkit/blocks.hpp"
#include "clusterkit/crve.hpp"
#include "clusterkit/dataset.hpp"
#include "clusterkit/estimator.hpp"

namespace clusterkit {

// Three-term two-way sandwich. The fillings carry CV1-style corrections
// computed per term from the number of clusters in that term (a dimension
// with a single cluster gets scalar 1; its filling is the outer product of
// the total score, which is zero).
struct TwoWayVariance {
  Eigen::MatrixXd sigma_g;   // dimension-1 filling
  Eigen::MatrixXd sigma_h;   // dimension-2 filling
  Eigen::MatrixXd sigma_gh;  // intersection filling
  Eigen::MatrixXd combined_filling;
  Eigen::MatrixXd matrix;    // the sandwich
  bool psd_flag = true;
  double min_eigenvalue = 0.0;
  int n_dim1 = 0;
  int n_dim2 = 0;
  int n_intersections = 0;
};

TwoWayVariance twoway_variance(const ClusteredDataset& d, const FitResult& f);

// "Use whichever is largest": the two one-way standard errors and, when its
// diagonal entry is positive, the two-way one. Ties go to two-way. The t
// reference uses min(G, H) - 1 degrees of freedom.
struct MaxSeChoice {
  TestResult test;
  std::string source;  // dim1 | dim2 | twoway
  double se_dim1 = 0.0;
  double se_dim2 = 0.0;
  std::optional<double> se_twoway;  // absent when diagonal entry <= 0
  bool twoway_psd = true;
  double min_eigenvalue = 0.0;
};

MaxSeChoice robust_max_se(const ClusteredDataset& d, const FitResult& f, int j,
                          double beta0 = 0.0, double alpha = 0.05);

}  // namespace clusterkit
