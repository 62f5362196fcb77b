#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clusterkit/bootstrap.hpp"
#include "clusterkit/dataset.hpp"

namespace clusterkit {

enum class OutcomeMode { CONTINUOUS, BINARY };
enum class PlaceboMode { ADD, REPLACE };
enum class PlaceboStrategy { CLUSTER_LEVEL, WITHIN_CLUSTER, ENUMERATE_ALL };

// Methods the simulation harness can score. Bootstrap methods reject on
// the symmetric bootstrap P value; analytic ones on the t(dof) P value.
//   hc1 hc2 hc3 cv1 cv2 cv3 pairs wcu-c wcu-s wcr-c wcr-s
std::vector<std::string> known_methods();

struct McDesign {
  std::vector<double> rho_grid{0.0};
  double sigma_total = 1.0;
  long R = 1000;
  bool beta0_from_fit = false;  // beta0 = beta_hat instead of 0
  OutcomeMode outcome = OutcomeMode::CONTINUOUS;
  std::vector<std::string> methods{"cv1", "cv3"};
  double alpha = 0.05;
  std::uint64_t seed = 1;
  int coef_index = 0;
  long boot_B = 399;
  std::optional<WeightDist> boot_weights;  // default: Rademacher if G >= 10
  int threads = 1;
  double band_lo = 0.9;  // reliability band [band_lo*alpha, band_hi*alpha]
  double band_hi = 1.1;
};

struct PlaceboDesign {
  PlaceboStrategy strategy = PlaceboStrategy::CLUSTER_LEVEL;
  std::optional<int> treated_clusters;  // cluster_level; default from data
  std::vector<PlaceboMode> modes{PlaceboMode::ADD, PlaceboMode::REPLACE};
  long R = 1000;
  std::vector<std::string> methods{"cv1", "cv3"};
  double alpha = 0.05;
  std::uint64_t seed = 1;
  int coef_index = 0;  // the treatment regressor the placebo mimics
  long boot_B = 399;
  std::optional<WeightDist> boot_weights;
  int threads = 1;
  double band_lo = 0.9;
  double band_hi = 1.1;
};

struct SimCell {
  std::string design;  // "rho=0.25" or "add"/"replace"
  std::string method;
  long replications = 0;
  long rejections = 0;
  long failures = 0;
  double rejection_rate = 0.0;
  double mc_stderr = 0.0;     // sqrt(p(1-p)/R)
  std::string verdict;        // reliable | over | under
  double realized_rho = 0.0;  // mean within-cluster residual correlation
};

struct SimReport {
  std::vector<SimCell> cells;
  double alpha = 0.05;
  double band_lower = 0.045;
  double band_upper = 0.055;
};

// Random-effects disturbances u_gi = v_g + eps_gi with var(v) = rho,
// var(eps) = 1 - rho (unit total variance), scaled by sigma_total.
// A pure function of (seed, design_point, replicate).
Eigen::VectorXd generate_re_disturbances(const std::vector<long>& sizes,
                                         double rho, std::uint64_t seed,
                                         long replicate,
                                         long design_point = 0,
                                         double sigma_total = 1.0);

// y_i = 0 when Phi(u_i) >= fitted_i, else 1.
Eigen::VectorXd binary_transform(const Eigen::VectorXd& u,
                                 const Eigen::VectorXd& fitted);

SimReport run_monte_carlo(const ClusteredDataset& d, const McDesign& design);

// One placebo regressor draw (exposed for tests; replicates are keyed by
// (seed, replicate, redraw attempt)).
Eigen::VectorXd generate_placebo(const ClusteredDataset& d,
                                 const PlaceboDesign& design, long replicate);

// Number of distinct placebo assignments excluding the actual treatment
// vector (log scale for huge spaces).
double placebo_space_log_size(const ClusteredDataset& d,
                              const PlaceboDesign& design);

SimReport run_placebo_study(const ClusteredDataset& d,
                            const PlaceboDesign& design);

}  // namespace clusterkit
