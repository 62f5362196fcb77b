#include "clusterkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "clusterkit/errors.hpp"

namespace clusterkit {

namespace {

// RFC-4180 style: quoted fields, doubled quotes, embedded separators and
// newlines inside quotes, optional trailing CR.
std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_started = false;
  char c;
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        row_started = true;
        break;
      case ',':
        row.push_back(field);
        field.clear();
        row_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_started || !field.empty() || !row.empty()) {
          row.push_back(field);
          rows.push_back(std::move(row));
          row.clear();
          field.clear();
          row_started = false;
        }
        break;
      default:
        field += c;
        row_started = true;
        break;
    }
  }
  if (row_started || !field.empty() || !row.empty()) {
    row.push_back(field);
    rows.push_back(std::move(row));
  }
  return rows;
}

double parse_cell(const std::string& cell, const std::string& col,
                  std::size_t row) {
  if (cell.empty()) throw err_missing_value(col, row);
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    throw err_non_numeric(col, row, cell);
  }
  while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos])))
    ++pos;
  if (pos != cell.size()) throw err_non_numeric(col, row, cell);
  if (!std::isfinite(v)) throw err_non_numeric(col, row, cell);
  return v;
}

// First-appearance-order dense labels.
std::pair<std::vector<int>, std::vector<std::string>> densify(
    const std::vector<std::string>& raw) {
  std::vector<int> ids(raw.size());
  std::vector<std::string> labels;
  std::unordered_map<std::string, int> seen;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto it = seen.find(raw[i]);
    if (it == seen.end()) {
      it = seen.emplace(raw[i], static_cast<int>(labels.size())).first;
      labels.push_back(raw[i]);
    }
    ids[i] = it->second;
  }
  return {std::move(ids), std::move(labels)};
}

ClusteredDataset assemble(Eigen::VectorXd y, Eigen::MatrixXd X,
                          std::vector<int> cid, std::vector<int> cid2,
                          std::vector<std::string> names,
                          std::optional<int> treatment_col,
                          std::vector<std::string> labels,
                          std::vector<std::string> labels2) {
  const std::ptrdiff_t n = y.size();
  if (n == 0) throw err_empty_file("(in-memory)");
  int G = 0;
  for (int c : cid) G = std::max(G, c + 1);
  if (G < 2) throw err_too_few_clusters(static_cast<std::size_t>(G));

  // Stable sort by cluster id; within-cluster input order is preserved.
  std::vector<std::ptrdiff_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::ptrdiff_t a, std::ptrdiff_t b) {
                     return cid[a] < cid[b];
                   });

  ClusteredDataset d;
  d.y.resize(n);
  d.X.resize(n, X.cols());
  d.cluster_id.resize(n);
  if (!cid2.empty()) d.cluster_id2.resize(n);
  d.original_row.resize(n);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t src = order[i];
    d.y(i) = y(src);
    d.X.row(i) = X.row(src);
    d.cluster_id[i] = cid[src];
    if (!cid2.empty()) d.cluster_id2[i] = cid2[src];
    d.original_row[i] = src;
  }
  d.column_names = std::move(names);
  d.treatment_col = treatment_col;
  d.cluster_labels = std::move(labels);
  d.cluster2_labels = std::move(labels2);
  return d;
}

}  // namespace

std::pair<std::ptrdiff_t, std::ptrdiff_t> ClusteredDataset::cluster_range(
    int g) const {
  auto lo = std::lower_bound(cluster_id.begin(), cluster_id.end(), g);
  auto hi = std::upper_bound(cluster_id.begin(), cluster_id.end(), g);
  return {lo - cluster_id.begin(), hi - cluster_id.begin()};
}

int ClusteredDataset::column_index(const std::string& name) const {
  for (std::size_t j = 0; j < column_names.size(); ++j)
    if (column_names[j] == name) return static_cast<int>(j);
  throw err_missing_column(name);
}

ClusteredDataset load_dataset(const std::string& path,
                              const ColumnSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("FileNotFound", "cannot open " + path);
  auto rows = parse_csv(in);
  if (rows.empty()) throw err_empty_file(path);
  const auto& header = rows.front();
  if (rows.size() < 2) throw err_empty_file(path);

  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t j = 0; j < header.size(); ++j) col_of[header[j]] = j;
  auto need = [&](const std::string& name) -> std::size_t {
    auto it = col_of.find(name);
    if (it == col_of.end()) throw err_missing_column(name);
    return it->second;
  };

  const std::size_t n = rows.size() - 1;
  auto cell = [&](std::size_t i, std::size_t j) -> const std::string& {
    const auto& r = rows[i + 1];
    static const std::string empty;
    return j < r.size() ? r[j] : empty;
  };

  const std::size_t y_col = need(spec.y);
  std::vector<std::size_t> x_cols;
  for (const auto& name : spec.x) x_cols.push_back(need(name));
  const std::size_t c_col = need(spec.cluster);
  std::optional<std::size_t> c2_col, fe_col;
  if (spec.cluster2) c2_col = need(*spec.cluster2);
  if (spec.fe_col) fe_col = need(*spec.fe_col);

  Eigen::VectorXd y(n);
  std::vector<std::string> craw(n), c2raw;
  for (std::size_t i = 0; i < n; ++i) {
    y(i) = parse_cell(cell(i, y_col), spec.y, i + 2);
    craw[i] = cell(i, c_col);
    if (craw[i].empty()) throw err_missing_value(spec.cluster, i + 2);
  }
  if (c2_col) {
    c2raw.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      c2raw[i] = cell(i, *c2_col);
      if (c2raw[i].empty()) throw err_missing_value(*spec.cluster2, i + 2);
    }
  }

  // Fixed-effect dummies from a label column, first level dropped.
  std::vector<std::string> fe_labels;
  std::vector<int> fe_ids;
  if (fe_col) {
    std::vector<std::string> raw(n);
    for (std::size_t i = 0; i < n; ++i) {
      raw[i] = cell(i, *fe_col);
      if (raw[i].empty()) throw err_missing_value(*spec.fe_col, i + 2);
    }
    std::tie(fe_ids, fe_labels) = densify(raw);
  }
  const std::size_t n_fe = fe_labels.empty() ? 0 : fe_labels.size() - 1;

  Eigen::MatrixXd X(n, x_cols.size() + n_fe);
  std::vector<std::string> names;
  for (std::size_t j = 0; j < x_cols.size(); ++j) {
    names.push_back(spec.x[j]);
    for (std::size_t i = 0; i < n; ++i)
      X(i, j) = parse_cell(cell(i, x_cols[j]), spec.x[j], i + 2);
  }
  for (std::size_t f = 1; f <= n_fe; ++f) {
    names.push_back(*spec.fe_col + "=" + fe_labels[f]);
    for (std::size_t i = 0; i < n; ++i)
      X(i, x_cols.size() + f - 1) =
          fe_ids[i] == static_cast<int>(f) ? 1.0 : 0.0;
  }

  std::optional<int> treatment;
  if (spec.treatment) {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == *spec.treatment) treatment = static_cast<int>(j);
    if (!treatment) throw err_missing_column(*spec.treatment);
  }

  auto [cid, labels] = densify(craw);
  std::vector<int> cid2;
  std::vector<std::string> labels2;
  if (c2_col) std::tie(cid2, labels2) = densify(c2raw);

  return assemble(std::move(y), std::move(X), std::move(cid), std::move(cid2),
                  std::move(names), treatment, std::move(labels),
                  std::move(labels2));
}

ClusteredDataset make_dataset(const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& X,
                              const std::vector<int>& cluster,
                              const std::vector<int>& cluster2,
                              std::vector<std::string> column_names,
                              std::optional<int> treatment_col) {
  if (column_names.empty()) {
    for (std::ptrdiff_t j = 0; j < X.cols(); ++j)
      column_names.push_back("x" + std::to_string(j));
  }
  std::vector<std::string> labels, labels2;
  int G = 0, H = 0;
  for (int c : cluster) G = std::max(G, c + 1);
  for (int c : cluster2) H = std::max(H, c + 1);
  for (int g = 0; g < G; ++g) labels.push_back(std::to_string(g));
  for (int h = 0; h < H; ++h) labels2.push_back(std::to_string(h));
  return assemble(y, X, cluster, cluster2, std::move(column_names),
                  treatment_col, std::move(labels), std::move(labels2));
}

ClusteredDataset weight_by_cluster_size(const ClusteredDataset& d) {
  ClusteredDataset w = d;
  const int G = d.n_clusters();
  for (int g = 0; g < G; ++g) {
    auto [b, e] = d.cluster_range(g);
    const double s = 1.0 / std::sqrt(static_cast<double>(e - b));
    w.y.segment(b, e - b) *= s;
    w.X.middleRows(b, e - b) *= s;
  }
  return w;
}

}  // namespace clusterkit
