#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clusterkit/blocks.hpp"
#include "clusterkit/crve.hpp"
#include "clusterkit/dataset.hpp"
#include "clusterkit/estimator.hpp"

namespace clusterkit {

enum class BootstrapVariant { PAIRS, WCU_C, WCU_S, WCR_C, WCR_S };
enum class WeightDist { RADEMACHER, WEBB6 };

const char* bootstrap_variant_name(BootstrapVariant v);
BootstrapVariant parse_bootstrap_variant(const std::string& s);
WeightDist parse_weight_dist(const std::string& s);

inline bool is_wild(BootstrapVariant v) { return v != BootstrapVariant::PAIRS; }
inline bool is_restricted(BootstrapVariant v) {
  return v == BootstrapVariant::WCR_C || v == BootstrapVariant::WCR_S;
}
inline bool is_score_variant(BootstrapVariant v) {
  return v == BootstrapVariant::WCU_S || v == BootstrapVariant::WCR_S;
}

struct BootstrapPlan {
  BootstrapVariant variant = BootstrapVariant::WCR_C;
  long B = 9999;
  WeightDist weights = WeightDist::RADEMACHER;
  std::uint64_t seed = 1;
  bool enumerate = false;  // wild + Rademacher + G <= 30 only
  int threads = 1;
};

struct BootstrapOutcome {
  double t_obs = 0.0;
  std::vector<double> t_star;     // finite replicates only
  double p_sym = 0.0;
  double p_equal_tail = 0.0;
  double boot_se = 0.0;
  double ci_lower = 0.0;          // studentized; valid for U variants/pairs
  double ci_upper = 0.0;
  bool ci_valid = false;
  long replicates_used = 0;
  long dropped = 0;
};

struct InvertedInterval {
  double lower = 0.0;
  double upper = 0.0;
  long replicates_used = 0;
};

// Mean-0 variance-1 auxiliary draws, a pure function of (seed, b, g).
Eigen::VectorXd draw_weights(WeightDist dist, int G, long replicate,
                             std::uint64_t seed);

// Replicate runner shared between wild_bootstrap and the simulation
// harness. The per-cluster reductions make each replicate O(G k): with
// a_j = (X'X)^{-1} e_j,
//   delta*_j = sum_g v_g (a_j' s_g)
//   CV1(delta*)_jj = scalar * sum_g (v_g a_j' s_g - (X_g'X_g a_j)' delta*)^2.
class WildEngine {
public:
  WildEngine(const Eigen::LDLT<Eigen::MatrixXd>& xtx_factor,
             const std::vector<Eigen::MatrixXd>& xtx_g, std::ptrdiff_t n_obs,
             int j);
  // DGP scores for the current sample; call before each run.
  void set_scores(const std::vector<Eigen::VectorXd>& scores);

  struct Run {
    long used = 0;
    long dropped = 0;
    std::vector<double> t_star;
    std::vector<double> delta_star;  // delta*_j of finite replicates
  };
  Run run(const BootstrapPlan& plan) const;

private:
  const std::vector<Eigen::MatrixXd>* xtx_g_;
  const Eigen::LDLT<Eigen::MatrixXd>* factor_;
  Eigen::VectorXd a_j_;
  std::vector<Eigen::VectorXd> r_g_;  // X_g'X_g a_j
  std::vector<Eigen::VectorXd> p_g_;  // (X'X)^{-1} s_g
  std::vector<double> q_g_;           // a_j' s_g
  double cv1_scalar_;
  int j_;
};

// Wild cluster bootstrap. The bootstrap DGP scores come from the variant:
// WCU-C the empirical scores, WCR-C the restricted scores, and the -S
// variants the jackknife-modified scores passed in `ms`. t* uses the CV1
// standard error rebuilt from the recentred bootstrap scores; t_obs is the
// CV1 t-statistic for beta_j = beta0.
BootstrapOutcome wild_bootstrap(const BootstrapPlan& plan,
                                const ClusterBlocks& b, const FitResult& f,
                                const RestrictedFit* rf,
                                const ModifiedScores* ms, int j, double beta0,
                                double alpha);

// Pairs cluster bootstrap on the precomputed [X_g'X_g, X_g'y_g] pairs.
BootstrapOutcome pairs_bootstrap(const BootstrapPlan& plan,
                                 const ClusterBlocks& b, const FitResult& f,
                                 int j, double beta0, double alpha);

double symmetric_pvalue(double t_obs, const std::vector<double>& t_star);
double equal_tail_pvalue(double t_obs, const std::vector<double>& t_star);

// Order-statistic convention: with B = 999 and alpha = 0.05 the quantiles
// are entries 25 and 975 of the sorted t*.
std::pair<double, double> studentized_ci(double beta_j, double se,
                                         const std::vector<double>& t_star,
                                         double alpha);

// Confidence interval for a restricted (WCR-*) variant: finds the two
// values of beta0 where the equal-tail bootstrap P value crosses alpha,
// reusing one array of weight draws at every trial value. Bracketing
// scales the Wald half-width by {1,2,4,8}; bisection stops at
// 1e-4 * se_CV1.
InvertedInterval invert_restricted_ci(const BootstrapPlan& plan,
                                      const ClusteredDataset& d,
                                      const ClusterBlocks& b,
                                      const FitResult& f, int j, double alpha);

}  // namespace clusterkit
