#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "clusterkit/blocks.hpp"
#include "clusterkit/dataset.hpp"
#include "clusterkit/estimator.hpp"

namespace clusterkit {

enum class VarianceKind { CV1, CV2, CV3, HC1, HC2, HC3, TWOWAY };

const char* variance_kind_name(VarianceKind k);

struct VarianceEstimate {
  Eigen::MatrixXd matrix;       // k x k, symmetric
  VarianceKind kind;
  double dof = 0.0;             // reference-distribution d.o.f.
  int effective_G = 0;          // clusters actually used
  std::vector<int> flagged;     // clusters handled by pseudo-inverse (CV2)
                                // or skipped as singular deletions (CV3)
};

struct TestResult {
  double coef = 0.0;
  double se = 0.0;
  double t_stat = 0.0;
  double p_value = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double dof = 0.0;
  std::string method;
};

// Plug-in CRVE with the G(N-1)/((G-1)(N-k)) correction.
VarianceEstimate cv1(const ClusterBlocks& b, const FitResult& f);

// Rescaled-block CRVE: scores rebuilt from M_gg^{-1/2} u_g via per-cluster
// eigendecomposition. Blocks with an eigenvalue below 1e-10 fall back to
// the pseudo-inverse root and are flagged. Cost O(N_g^3) per cluster; a
// warning is emitted on stderr when max N_g > 2000.
VarianceEstimate cv2(const ClusteredDataset& d, const ClusterBlocks& b,
                     const FitResult& f);

// Cluster-jackknife CRVE: (G-1)/G sum of outer products of
// beta^(g) - beta_hat over computable deletions.
VarianceEstimate cv3(const JackknifeSet& jk, const FitResult& f);

// t-statistic for beta_j = b0j against t(dof); CI at level 1 - alpha.
TestResult t_test(const VarianceEstimate& ve, const FitResult& f, int j,
                  double beta0j, double alpha);

// HC1/HC2/HC3 via the all-singleton-cluster specialization of the same
// machinery (the reduction the estimators are defined by).
VarianceEstimate hc_variance(const ClusteredDataset& d, VarianceKind kind);

}  // namespace clusterkit
