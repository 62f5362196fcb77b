#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "clusterkit/blocks.hpp"
#include "clusterkit/crve.hpp"
#include "clusterkit/dataset.hpp"
#include "clusterkit/estimator.hpp"

namespace clusterkit {

struct LeverageProfile {
  Eigen::VectorXd leverage;          // L_gj, sums to 1
  double scaled_variance = 0.0;      // V_s
  double effective_clusters = 0.0;   // G*(0) = G / (1 + V_s)
  int coef_index = 0;
};

LeverageProfile partial_leverage_profile(const ClusteredDataset& d,
                                         const FitResult& f, int j);

struct ClusterVarianceProfile {
  std::vector<double> sigma2;    // NaN for singleton clusters
  std::vector<double> mean_residual;
  std::vector<char> available;
  double coef_variation = 0.0;   // across available clusters
};

ClusterVarianceProfile cluster_variance_profile(const ClusteredDataset& d,
                                                const FitResult& f);

// Regression of squared residuals on (1, T), cluster-robust CV1 test of
// the treatment shift in average variance.
struct TreatmentVarianceResult {
  double eta1 = 0.0;
  double eta2 = 0.0;
  double ratio = 0.0;  // eta2 / eta1
  TestResult test;
};

TreatmentVarianceResult treatment_variance_test(const ClusteredDataset& d,
                                                const FitResult& f,
                                                int treatment_col);

struct OmitOneDispersion {
  std::vector<double> delta;  // beta_j^(g) - beta_j, NaN when not computable
  std::vector<char> computable;
  std::vector<int> flagged;   // |delta| > 3 x IQR
  int max_cluster = -1;
  double iqr = 0.0;
};

OmitOneDispersion omit_one_dispersion(const JackknifeSet& jk,
                                      const FitResult& f, int j);

// Qualitative guidance only in the source material; these cutoffs are
// configurable and echoed in the report.
struct RedFlagThresholds {
  int min_clusters = 20;
  int min_treated = 6;
  double max_cluster_share = 0.25;
  double min_effective_ratio = 1.0 / 3.0;
  double max_variance_cov = 1.0;
  double eta2_pvalue = 0.05;
  double eta2_ratio = 0.5;
  double omit_iqr_multiple = 3.0;
};

struct RedFlagReport {
  int G = 0;
  long N = 0;
  long min_ng = 0;
  double median_ng = 0.0;
  long max_ng = 0;
  double largest_share = 0.0;
  int G1 = -1;  // treated clusters; -1 when no treatment column
  int G0 = -1;
  LeverageProfile leverage;
  ClusterVarianceProfile variance_profile;
  std::optional<TreatmentVarianceResult> treatment;
  std::optional<std::string> treatment_error;
  std::optional<OmitOneDispersion> omit_one;
  std::optional<std::string> omit_one_error;
  std::vector<std::string> flags;
  RedFlagThresholds thresholds;
};

RedFlagReport red_flag_report(const ClusteredDataset& d, const FitResult& f,
                              int j, const RedFlagThresholds& th = {});

}  // namespace clusterkit
