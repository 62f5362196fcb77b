#pragma once

#include <Eigen/Dense>
#include <vector>

#include "clusterkit/blocks.hpp"
#include "clusterkit/dataset.hpp"
#include "clusterkit/rng.hpp"

namespace testkit {

// DS1: six observations, clusters sized 1/2/3, X = [1, x] with x = 1..6,
// y = (1,1,2,2,3,4). Used throughout as the hand-checked fixture.
inline clusterkit::ClusteredDataset ds1() {
  Eigen::VectorXd y(6);
  y << 1, 1, 2, 2, 3, 4;
  Eigen::MatrixXd X(6, 2);
  X << 1, 1, 1, 2, 1, 3, 1, 4, 1, 5, 1, 6;
  const std::vector<int> cid = {0, 1, 1, 2, 2, 2};
  return clusterkit::make_dataset(y, X, cid, {}, {"const", "x"});
}

// Random full-rank instance with an intercept column.
struct RandomInstance {
  clusterkit::ClusteredDataset data;
};

inline clusterkit::ClusteredDataset random_instance(
    std::uint64_t seed, int max_G = 8, int max_ng = 6, int max_k = 4) {
  clusterkit::CounterRng rng(seed, clusterkit::stream_id(0x7465737473ull));
  for (int attempt = 0;; ++attempt) {
    const int G = 2 + static_cast<int>(rng.next_below(max_G - 1));
    const int k = 1 + static_cast<int>(rng.next_below(max_k));
    std::vector<int> cid;
    for (int g = 0; g < G; ++g) {
      const int ng = 1 + static_cast<int>(rng.next_below(max_ng));
      for (int i = 0; i < ng; ++i) cid.push_back(g);
    }
    const int n = static_cast<int>(cid.size());
    if (n < k + 2) continue;
    Eigen::MatrixXd X(n, k);
    X.col(0).setOnes();
    for (int j = 1; j < k; ++j)
      for (int i = 0; i < n; ++i) X(i, j) = rng.next_normal();
    Eigen::VectorXd beta(k);
    for (int j = 0; j < k; ++j) beta(j) = rng.next_normal();
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = X.row(i).dot(beta) + rng.next_normal();
    auto d = clusterkit::make_dataset(y, X, cid);
    const Eigen::MatrixXd xtx = d.X.transpose() * d.X;
    Eigen::LDLT<Eigen::MatrixXd> f(xtx);
    const Eigen::VectorXd dvec = f.vectorD();
    if (dvec.minCoeff() > 1e-8 * dvec.maxCoeff()) return d;
  }
}

// Dense OLS through a QR factorization of X itself; independent of the
// block-based normal-equations path.
inline Eigen::VectorXd dense_ols(const Eigen::MatrixXd& X,
                                 const Eigen::VectorXd& y) {
  return X.colPivHouseholderQr().solve(y);
}

inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

inline double max_rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(),
                                b.cwiseAbs().maxCoeff());
  if (scale == 0.0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace testkit
