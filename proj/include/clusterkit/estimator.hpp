#pragma once

#include <Eigen/Dense>
#include <vector>

#include "clusterkit/blocks.hpp"
#include "clusterkit/dataset.hpp"

namespace clusterkit {

struct Restriction {
  int coef_index = 0;
  double value = 0.0;
};

struct FitResult {
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd residuals;
  std::vector<Eigen::VectorXd> scores;  // s_g = X_g' u_g, one per cluster
  Eigen::LDLT<Eigen::MatrixXd> xtx_factor;
};

struct RestrictedFit {
  Eigen::VectorXd beta_tilde;  // element j pinned to the restriction value
  Eigen::VectorXd residuals_tilde;
  std::vector<Eigen::VectorXd> scores_tilde;
  Restriction restriction;
};

struct JackknifeSet {
  std::vector<Eigen::VectorXd> beta_g;  // leave-one-cluster-out estimates
  std::vector<char> computable;
  int n_computable() const {
    int n = 0;
    for (char c : computable) n += c != 0;
    return n;
  }
};

// Modified score vectors; per-cluster flags propagate singular deletions.
struct ModifiedScores {
  std::vector<Eigen::VectorXd> s;
  std::vector<char> computable;
};

// LDLT with a pivot-spread rank check (min pivot < 1e-10 x max pivot is
// treated as rank deficient). Throws RankDeficient.
Eigen::LDLT<Eigen::MatrixXd> checked_ldlt(const Eigen::MatrixXd& m,
                                          const char* context);
bool ldlt_full_rank(const Eigen::LDLT<Eigen::MatrixXd>& f);

FitResult ols_fit(const ClusteredDataset& d, const ClusterBlocks& b);

// Regresses y - b0j * x_j on the remaining columns and reassembles the
// k-vector; scores come straight off the blocks.
RestrictedFit restricted_fit(const ClusteredDataset& d, const ClusterBlocks& b,
                             const Restriction& r);

// The coefficient part of restricted_fit, needing only cross-products.
Eigen::VectorXd restricted_beta(const ClusterBlocks& b, const Restriction& r);

JackknifeSet jackknife_estimates(const ClusterBlocks& b, const FitResult& f);

// acute s_g = X'X (beta_hat - beta^(g)); the cheap identity form of
// X_g' M_gg^{-1} u_g.
ModifiedScores modified_scores_unrestricted(const ClusterBlocks& b,
                                            const FitResult& f,
                                            const JackknifeSet& jk);

// dotted s_g = X_g' Mr_gg^{-1} ur_g, where Mr annihilates the regressors of
// the restricted model (all columns except j). The per-cluster inverse
// blocks depend only on X and j, so they can be reused across restriction
// values and simulated samples via RestrictedScoreTransform.
class RestrictedScoreTransform {
public:
  RestrictedScoreTransform(const ClusteredDataset& d, const ClusterBlocks& b,
                           int coef_index);
  ModifiedScores apply(const ClusteredDataset& d,
                       const Eigen::VectorXd& residuals_tilde) const;
  int coef_index() const { return coef_index_; }

private:
  std::vector<Eigen::MatrixXd> w_g_;  // k x N_g, = X_g' Mr_gg^{-1}
  std::vector<char> computable_;
  int coef_index_;
};

ModifiedScores modified_scores_restricted(const ClusteredDataset& d,
                                          const ClusterBlocks& b,
                                          const RestrictedFit& rf);

// Deletion factorizations reused across Monte Carlo replicates (X fixed).
class JackknifeFactors {
public:
  explicit JackknifeFactors(const ClusterBlocks& b);
  JackknifeSet estimates(const ClusterBlocks& b,
                         const Eigen::VectorXd& xty) const;
  const std::vector<char>& computable() const { return computable_; }

private:
  std::vector<Eigen::LDLT<Eigen::MatrixXd>> factors_;
  std::vector<char> computable_;
};

// M_gg = I - X_g (X'X)^{-1} X_g', built on demand; memory O(N_g^2).
Eigen::MatrixXd annihilator_block(const Eigen::MatrixXd& x_rows,
                                  const Eigen::LDLT<Eigen::MatrixXd>& factor);

}  // namespace clusterkit
