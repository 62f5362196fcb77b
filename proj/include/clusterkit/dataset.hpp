#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace clusterkit {

// Column mapping for CSV ingestion. Cluster columns may hold strings; they
// are mapped to dense integer labels in first-appearance order. `fe_col`
// one-hot expands a label column into fixed-effect dummies (first level
// dropped).
struct ColumnSpec {
  std::string y;
  std::vector<std::string> x;
  std::string cluster;
  std::optional<std::string> cluster2;
  std::optional<std::string> treatment;  // must also appear in `x`
  std::optional<std::string> fe_col;
};

// Observations are stored cluster-contiguous (dimension 1), stable within
// cluster. Immutable after construction; share freely across workers.
struct ClusteredDataset {
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  std::vector<int> cluster_id;                 // dense 0..G-1, sorted blocks
  std::vector<int> cluster_id2;                // dense 0..H-1, empty if absent
  std::vector<std::string> column_names;       // k names
  std::optional<int> treatment_col;
  std::vector<std::string> cluster_labels;     // original label per dense id
  std::vector<std::string> cluster2_labels;
  std::vector<std::ptrdiff_t> original_row;    // position in the input file

  std::ptrdiff_t n_obs() const { return y.size(); }
  std::ptrdiff_t n_coef() const { return X.cols(); }
  int n_clusters() const {
    return cluster_id.empty() ? 0 : cluster_id.back() + 1;
  }
  bool has_second_dimension() const { return !cluster_id2.empty(); }

  // [begin, end) row range of dimension-1 cluster g.
  std::pair<std::ptrdiff_t, std::ptrdiff_t> cluster_range(int g) const;
  std::ptrdiff_t cluster_size(int g) const {
    auto [b, e] = cluster_range(g);
    return e - b;
  }
  int column_index(const std::string& name) const;  // throws MissingColumn
};

ClusteredDataset load_dataset(const std::string& path, const ColumnSpec& spec);

// Assembles a dataset from in-memory arrays (labels need not be contiguous;
// rows are normalized exactly as load_dataset does).
ClusteredDataset make_dataset(const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& X,
                              const std::vector<int>& cluster,
                              const std::vector<int>& cluster2 = {},
                              std::vector<std::string> column_names = {},
                              std::optional<int> treatment_col = std::nullopt);

// Rows of cluster g scaled by N_g^(-1/2), giving every cluster equal weight.
ClusteredDataset weight_by_cluster_size(const ClusteredDataset& d);

}  // namespace clusterkit
