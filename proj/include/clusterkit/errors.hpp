#pragma once

#include <stdexcept>
#include <string>

namespace clusterkit {

// All library errors derive from one of two roots so the CLI can map them
// to exit codes: DataError -> 2 (bad input), MethodError -> 3 (estimation
// or simulation failure). `code()` is a stable identifier for tests.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

private:
  std::string code_;
};

class DataError : public Error {
public:
  using Error::Error;
};

class MethodError : public Error {
public:
  using Error::Error;
};

inline DataError err_empty_file(const std::string& path) {
  return DataError("EmptyFile", "no data rows in " + path);
}
inline DataError err_missing_column(const std::string& name) {
  return DataError("MissingColumn", "column not found: " + name);
}
inline DataError err_non_numeric(const std::string& col, std::size_t row,
                                 const std::string& cell) {
  return DataError("NonNumericCell", "column '" + col + "', row " +
                                         std::to_string(row) +
                                         ": cannot parse '" + cell + "'");
}
inline DataError err_too_few_clusters(std::size_t g) {
  return DataError("TooFewClusters",
                   "need at least 2 clusters, got " + std::to_string(g));
}
inline DataError err_missing_value(const std::string& col, std::size_t row) {
  return DataError("MissingValue", "column '" + col + "', row " +
                                       std::to_string(row) +
                                       ": empty cell (no imputation)");
}
inline DataError err_not_nested(const std::string& fine_label) {
  return DataError("NotNested", "fine cluster '" + fine_label +
                                    "' spans more than one coarse cluster");
}

inline MethodError err_rank_deficient(const std::string& what) {
  return MethodError("RankDeficient", what);
}
inline MethodError err_all_deletions_singular() {
  return MethodError("AllDeletionsSingular",
                     "every leave-one-cluster-out system is singular");
}
inline MethodError err_too_few_deletions(std::size_t n) {
  return MethodError("TooFewDeletions",
                     "need >= 2 computable deletions, got " +
                         std::to_string(n));
}
inline MethodError err_zero_variance(int j) {
  return MethodError("ZeroVariance", "variance estimate for coefficient " +
                                          std::to_string(j) +
                                          " is not positive");
}
inline MethodError err_not_computable(std::size_t g) {
  return MethodError("NotComputable",
                     "modified score not computable for cluster " +
                         std::to_string(g));
}
inline MethodError err_too_many_degenerate(std::size_t dropped,
                                           std::size_t total) {
  return MethodError("TooManyDegenerate",
                     std::to_string(dropped) + " of " + std::to_string(total) +
                         " bootstrap replicates degenerate (> 10%)");
}
inline MethodError err_no_bracket(double p_at_edge) {
  return MethodError("NoBracket",
                     "equal-tail P value never crosses the target level "
                     "within the x8 bracket (p at edge = " +
                         std::to_string(p_at_edge) + ")");
}
inline MethodError err_degenerate_nesting() {
  return MethodError("DegenerateNesting",
                     "every coarse cluster contains a single fine cluster; "
                     "the score-variance statistic is identically zero");
}
inline MethodError err_all_treated() {
  return MethodError("AllTreated", "treatment column has no control rows");
}
inline MethodError err_all_control() {
  return MethodError("AllControl", "treatment column has no treated rows");
}
inline MethodError err_zero_partial_variance(int j) {
  return MethodError("ZeroPartialVariance",
                     "regressor " + std::to_string(j) +
                         " is collinear with the other regressors");
}
inline MethodError err_too_few_assignments(double count) {
  return MethodError(
      "TooFewAssignments",
      "only " + std::to_string(static_cast<long long>(count)) +
          " distinct placebo assignments exist (< 100); an empirical "
          "distribution on so few points is uninformative");
}
inline MethodError err_invalid_plan(const std::string& what) {
  return MethodError("InvalidPlan", what);
}

}  // namespace clusterkit
