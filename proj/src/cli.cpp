#include "clusterkit/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "clusterkit/bootstrap.hpp"
#include "clusterkit/crve.hpp"
#include "clusterkit/dataset.hpp"
#include "clusterkit/diagnostics.hpp"
#include "clusterkit/errors.hpp"
#include "clusterkit/simulate.hpp"
#include "clusterkit/svtest.hpp"
#include "clusterkit/twoway.hpp"

namespace clusterkit {

const char* kVersion = "0.1.0";

namespace {

using nlohmann::json;

int env_threads() {
  const char* v = std::getenv("CLUSTERKIT_THREADS");
  if (!v || !*v) return 1;
  const int n = std::atoi(v);
  return n > 0 ? n : 1;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct CommonOpts {
  std::string path;
  std::string y = "y";
  std::string x_list;
  std::string cluster;
  std::string cluster2;
  std::string treatment;
  std::string fe;
  std::string format = "text";
  int threads = env_threads();
  double level = 0.95;
};

void add_data_options(CLI::App* sub, CommonOpts& o, bool need_cluster = true) {
  sub->add_option("data", o.path, "CSV file (header required)")->required();
  sub->add_option("--y", o.y, "regressand column");
  sub->add_option("--x", o.x_list, "comma-separated regressor columns")
      ->required();
  auto* c = sub->add_option("--cluster", o.cluster, "cluster id column");
  if (need_cluster) c->required();
  sub->add_option("--cluster2", o.cluster2, "second cluster dimension");
  sub->add_option("--treatment", o.treatment,
                  "treatment column (must be listed in --x)");
  sub->add_option("--fe", o.fe,
                  "label column expanded to fixed-effect dummies");
  sub->add_option("--format", o.format, "text or json")
      ->check(CLI::IsMember({"text", "json"}));
  sub->add_option("--threads", o.threads, "worker threads");
  sub->add_option("--level", o.level, "confidence level");
}

// key=value config files, applied as defaults: a key already present on
// the command line wins.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      path = args[i + 1];
      args.erase(args.begin() + i, args.begin() + i + 2);
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw DataError("FileNotFound", "cannot open config " + path);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = "--" + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "--" || value.empty()) continue;
    if (std::find(args.begin(), args.end(), key) == args.end()) {
      args.push_back(key);
      args.push_back(value);
    }
  }
  return args;
}

ClusteredDataset load_from(const CommonOpts& o) {
  ColumnSpec spec;
  spec.y = o.y;
  spec.x = split_list(o.x_list);
  spec.cluster = o.cluster;
  if (!o.cluster2.empty()) spec.cluster2 = o.cluster2;
  if (!o.treatment.empty()) spec.treatment = o.treatment;
  if (!o.fe.empty()) spec.fe_col = o.fe;
  return load_dataset(o.path, spec);
}

json config_json(const CommonOpts& o) {
  // Execution-only settings (threads) are omitted so that reports are
  // byte-identical for any worker count.
  json c;
  c["data"] = o.path;
  c["y"] = o.y;
  c["x"] = o.x_list;
  if (!o.cluster.empty()) c["cluster"] = o.cluster;
  if (!o.cluster2.empty()) c["cluster2"] = o.cluster2;
  if (!o.treatment.empty()) c["treatment"] = o.treatment;
  if (!o.fe.empty()) c["fe"] = o.fe;
  c["level"] = o.level;
  return c;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index jx = 0; jx < m.cols(); ++jx) row.push_back(m(i, jx));
    rows.push_back(std::move(row));
  }
  return rows;
}

json test_json(const TestResult& t) {
  json o;
  o["coef"] = t.coef;
  o["se"] = t.se;
  o["t"] = t.t_stat;
  o["p"] = t.p_value;
  o["ci_lower"] = t.ci_lower;
  o["ci_upper"] = t.ci_upper;
  o["dof"] = t.dof;
  o["method"] = t.method;
  return o;
}

void emit(const CommonOpts& o, const json& doc, const std::string& text,
          std::ostream& out) {
  if (o.format == "json")
    out << doc.dump(2) << "\n";
  else
    out << text;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(6) << v;
  return ss.str();
}

json sim_report_json(const SimReport& rep) {
  json cells = json::array();
  for (const auto& c : rep.cells) {
    json e;
    e["design"] = c.design;
    e["method"] = c.method;
    e["replications"] = c.replications;
    e["rejections"] = c.rejections;
    e["failures"] = c.failures;
    e["rejection_rate"] = c.rejection_rate;
    e["mc_stderr"] = c.mc_stderr;
    e["verdict"] = c.verdict;
    e["realized_rho"] = c.realized_rho;
    cells.push_back(std::move(e));
  }
  json r;
  r["alpha"] = rep.alpha;
  r["band_lower"] = rep.band_lower;
  r["band_upper"] = rep.band_upper;
  r["cells"] = std::move(cells);
  return r;
}

std::string sim_report_text(const SimReport& rep) {
  std::ostringstream os;
  os << "rejection frequencies at level " << rep.alpha << " (reliable band ["
     << rep.band_lower << ", " << rep.band_upper << "])\n";
  os << std::left << std::setw(14) << "design" << std::setw(9) << "method"
     << std::right << std::setw(8) << "R" << std::setw(10) << "reject"
     << std::setw(10) << "mc se" << std::setw(10) << "verdict"
     << std::setw(14) << "realized rho" << "\n";
  for (const auto& c : rep.cells) {
    os << std::left << std::setw(14) << c.design << std::setw(9) << c.method
       << std::right << std::setw(8) << c.replications << std::setw(10)
       << fmt(c.rejection_rate) << std::setw(10) << fmt(c.mc_stderr)
       << std::setw(10) << c.verdict << std::setw(14)
       << (std::isnan(c.realized_rho) ? std::string("-")
                                      : fmt(c.realized_rho))
       << "\n";
  }
  return os.str();
}

WeightDist weights_or_default(const std::string& w, int G) {
  if (!w.empty()) return parse_weight_dist(w);
  return G >= 10 ? WeightDist::RADEMACHER : WeightDist::WEBB6;
}

// ------------------------------------------------------------------ fit

int cmd_fit(const CommonOpts& o, std::ostream& out) {
  const ClusteredDataset d = load_from(o);
  const ClusterBlocks b = build_blocks(d);
  const FitResult f = ols_fit(d, b);
  const VarianceEstimate v1 = cv1(b, f);
  const double alpha = 1.0 - o.level;

  json coefs = json::array();
  std::ostringstream txt;
  txt << "N = " << d.n_obs() << ", G = " << d.n_clusters()
      << ", k = " << d.n_coef() << "\n";
  txt << std::left << std::setw(18) << "coefficient" << std::right
      << std::setw(12) << "estimate" << std::setw(12) << "cv1 se"
      << std::setw(10) << "cv1 p" << std::setw(12) << "cv3 se"
      << std::setw(10) << "cv3 p" << "\n";

  std::optional<VarianceEstimate> v3;
  std::string cv3_error;
  try {
    v3 = cv3(jackknife_estimates(b, f), f);
  } catch (const Error& e) {
    cv3_error = e.code();
  }

  for (int j = 0; j < d.n_coef(); ++j) {
    const TestResult t1 = t_test(v1, f, j, 0.0, alpha);
    json c;
    c["name"] = d.column_names[j];
    c["estimate"] = f.beta_hat(j);
    c["cv1"] = test_json(t1);
    txt << std::left << std::setw(18) << d.column_names[j] << std::right
        << std::setw(12) << fmt(f.beta_hat(j)) << std::setw(12) << fmt(t1.se)
        << std::setw(10) << fmt(t1.p_value);
    if (v3) {
      const TestResult t3 = t_test(*v3, f, j, 0.0, alpha);
      c["cv3"] = test_json(t3);
      txt << std::setw(12) << fmt(t3.se) << std::setw(10) << fmt(t3.p_value);
    } else {
      c["cv3"] = nullptr;
      txt << std::setw(12) << "n/a" << std::setw(10) << "n/a";
    }
    txt << "\n";
    coefs.push_back(std::move(c));
  }
  if (!cv3_error.empty()) txt << "cv3 unavailable: " << cv3_error << "\n";

  json doc;
  doc["command"] = "fit";
  doc["config"] = config_json(o);
  doc["version"] = kVersion;
  json rep;
  rep["N"] = d.n_obs();
  rep["G"] = d.n_clusters();
  rep["k"] = d.n_coef();
  rep["coefficients"] = std::move(coefs);
  if (!cv3_error.empty()) rep["cv3_error"] = cv3_error;
  doc["report"] = std::move(rep);
  emit(o, doc, txt.str(), out);
  return 0;
}

// ----------------------------------------------------------------- vcov

int cmd_vcov(const CommonOpts& o, const std::string& kind_s,
             const std::string& coef, double null_value, std::ostream& out) {
  const ClusteredDataset d = load_from(o);
  const ClusterBlocks b = build_blocks(d);
  const FitResult f = ols_fit(d, b);
  const double alpha = 1.0 - o.level;

  VarianceEstimate ve;
  if (kind_s == "cv1") ve = cv1(b, f);
  else if (kind_s == "cv2") ve = cv2(d, b, f);
  else if (kind_s == "cv3") ve = cv3(jackknife_estimates(b, f), f);
  else if (kind_s == "hc1") ve = hc_variance(d, VarianceKind::HC1);
  else if (kind_s == "hc2") ve = hc_variance(d, VarianceKind::HC2);
  else ve = hc_variance(d, VarianceKind::HC3);

  // HC tests need the same fit but the singleton variance matrix.
  json tests = json::array();
  std::ostringstream txt;
  txt << variance_kind_name(ve.kind) << " (dof = " << ve.dof
      << ", clusters used = " << ve.effective_G << ")\n";
  txt << std::left << std::setw(18) << "coefficient" << std::right
      << std::setw(12) << "estimate" << std::setw(12) << "se" << std::setw(10)
      << "t" << std::setw(10) << "p" << std::setw(24) << "confidence interval"
      << "\n";
  for (int j = 0; j < d.n_coef(); ++j) {
    if (!coef.empty() && d.column_names[j] != coef) continue;
    const TestResult t = t_test(ve, f, j, null_value, alpha);
    json e = test_json(t);
    e["name"] = d.column_names[j];
    tests.push_back(std::move(e));
    txt << std::left << std::setw(18) << d.column_names[j] << std::right
        << std::setw(12) << fmt(t.coef) << std::setw(12) << fmt(t.se)
        << std::setw(10) << fmt(t.t_stat) << std::setw(10) << fmt(t.p_value)
        << "   [" << fmt(t.ci_lower) << ", " << fmt(t.ci_upper) << "]\n";
  }

  json doc;
  doc["command"] = "vcov";
  doc["config"] = config_json(o);
  doc["config"]["kind"] = kind_s;
  doc["config"]["null"] = null_value;
  doc["version"] = kVersion;
  json rep;
  rep["kind"] = variance_kind_name(ve.kind);
  rep["matrix"] = matrix_json(ve.matrix);
  rep["dof"] = ve.dof;
  rep["effective_G"] = ve.effective_G;
  rep["flagged_clusters"] = ve.flagged;
  rep["tests"] = std::move(tests);
  doc["report"] = std::move(rep);
  emit(o, doc, txt.str(), out);
  return 0;
}

// ----------------------------------------------------------------- boot

int cmd_boot(const CommonOpts& o, const std::string& variant_s, long B,
             const std::string& weights_s, std::uint64_t seed,
             const std::string& coef, double null_value, bool enumerate,
             std::ostream& out) {
  const ClusteredDataset d = load_from(o);
  const ClusterBlocks b = build_blocks(d);
  const FitResult f = ols_fit(d, b);
  const int j = d.column_index(coef);
  const double alpha = 1.0 - o.level;

  BootstrapPlan plan;
  plan.variant = parse_bootstrap_variant(variant_s);
  plan.B = B;
  plan.weights = weights_or_default(weights_s, d.n_clusters());
  plan.seed = seed;
  plan.enumerate = enumerate;
  plan.threads = o.threads;

  BootstrapOutcome oc;
  std::string ci_kind = "studentized";
  if (plan.variant == BootstrapVariant::PAIRS) {
    oc = pairs_bootstrap(plan, b, f, j, null_value, alpha);
  } else if (is_restricted(plan.variant)) {
    const RestrictedFit rf = restricted_fit(d, b, Restriction{j, null_value});
    if (plan.variant == BootstrapVariant::WCR_S) {
      const ModifiedScores ms = modified_scores_restricted(d, b, rf);
      oc = wild_bootstrap(plan, b, f, &rf, &ms, j, null_value, alpha);
    } else {
      oc = wild_bootstrap(plan, b, f, &rf, nullptr, j, null_value, alpha);
    }
    const InvertedInterval iv = invert_restricted_ci(plan, d, b, f, j, alpha);
    oc.ci_lower = iv.lower;
    oc.ci_upper = iv.upper;
    oc.ci_valid = true;
    ci_kind = "inverted";
  } else {
    if (plan.variant == BootstrapVariant::WCU_S) {
      const ModifiedScores ms = modified_scores_unrestricted(
          b, f, jackknife_estimates(b, f));
      oc = wild_bootstrap(plan, b, f, nullptr, &ms, j, null_value, alpha);
    } else {
      oc = wild_bootstrap(plan, b, f, nullptr, nullptr, j, null_value, alpha);
    }
  }

  json doc;
  doc["command"] = "boot";
  doc["config"] = config_json(o);
  doc["config"]["variant"] = variant_s;
  doc["config"]["B"] = B;
  doc["config"]["weights"] =
      plan.weights == WeightDist::RADEMACHER ? "rademacher" : "webb6";
  doc["config"]["seed"] = seed;
  doc["config"]["coef"] = coef;
  doc["config"]["null"] = null_value;
  doc["config"]["enumerate"] = enumerate;
  doc["version"] = kVersion;
  json rep;
  rep["t_obs"] = oc.t_obs;
  rep["p_sym"] = oc.p_sym;
  rep["p_equal_tail"] = oc.p_equal_tail;
  rep["boot_se"] = oc.boot_se;
  rep["ci_lower"] = oc.ci_lower;
  rep["ci_upper"] = oc.ci_upper;
  rep["ci_kind"] = ci_kind;
  rep["replicates_used"] = oc.replicates_used;
  rep["dropped"] = oc.dropped;
  doc["report"] = std::move(rep);

  std::ostringstream txt;
  txt << variant_s << " bootstrap for " << coef << " = " << null_value
      << " (B = " << B << ")\n"
      << "  t_obs        = " << fmt(oc.t_obs) << "\n"
      << "  p (sym)      = " << fmt(oc.p_sym) << "\n"
      << "  p (eq tail)  = " << fmt(oc.p_equal_tail) << "\n"
      << "  boot se      = " << fmt(oc.boot_se) << "\n"
      << "  " << (o.level * 100) << "% CI (" << ci_kind << ") = ["
      << fmt(oc.ci_lower) << ", " << fmt(oc.ci_upper) << "]\n"
      << "  replicates used = " << oc.replicates_used << ", dropped = "
      << oc.dropped << "\n";
  emit(o, doc, txt.str(), out);
  return 0;
}

// --------------------------------------------------------------- svtest

int cmd_svtest(CommonOpts& o, const std::string& coef, const std::string& fine,
               const std::string& coarse, long boot_B, std::uint64_t seed,
               std::ostream& out) {
  o.cluster = fine;
  o.cluster2 = coarse;
  const ClusteredDataset d = load_from(o);
  const NestedClustering nest = make_nested(d.cluster_id2, d.cluster_id);
  const int j = d.column_index(coef);

  const SvResult r = boot_B > 0
                         ? score_variance_bootstrap(d, nest, j, boot_B, seed,
                                                    o.threads)
                         : score_variance_test(d, nest, j);

  json doc;
  doc["command"] = "svtest";
  doc["config"] = config_json(o);
  doc["config"]["coef"] = coef;
  doc["config"]["fine"] = fine;
  doc["config"]["coarse"] = coarse;
  doc["config"]["boot"] = boot_B;
  doc["config"]["seed"] = seed;
  doc["version"] = kVersion;
  json rep;
  rep["theta_hat"] = r.theta_hat;
  rep["sv_stat"] = r.sv_stat;
  rep["p_asymptotic"] = r.p_asymptotic;
  if (r.p_bootstrap) rep["p_bootstrap"] = *r.p_bootstrap;
  rep["degenerate"] = r.degenerate;
  rep["theta_g"] = r.theta_g;
  doc["report"] = std::move(rep);

  std::ostringstream txt;
  txt << "score-variance test, fine = " << fine << " vs coarse = " << coarse
      << ", coefficient " << coef << "\n";
  if (r.degenerate) {
    txt << "  degenerate nesting: every coarse cluster holds one fine "
           "cluster; theta = 0\n";
  } else {
    txt << "  theta        = " << fmt(r.theta_hat) << "\n"
        << "  statistic    = " << fmt(r.sv_stat) << "\n"
        << "  p (asympt.)  = " << fmt(r.p_asymptotic) << "\n";
    if (r.p_bootstrap)
      txt << "  p (bootstrap, B = " << r.bootstrap_B
          << ") = " << fmt(*r.p_bootstrap) << "\n";
  }
  emit(o, doc, txt.str(), out);
  return 0;
}

// --------------------------------------------------------------- twoway

int cmd_twoway(const CommonOpts& o, const std::string& coef, double null_value,
               std::ostream& out) {
  const ClusteredDataset d = load_from(o);
  const ClusterBlocks b = build_blocks(d);
  const FitResult f = ols_fit(d, b);
  const int j = d.column_index(coef);
  const double alpha = 1.0 - o.level;

  const TwoWayVariance tw = twoway_variance(d, f);
  const MaxSeChoice choice = robust_max_se(d, f, j, null_value, alpha);

  json doc;
  doc["command"] = "twoway";
  doc["config"] = config_json(o);
  doc["config"]["coef"] = coef;
  doc["config"]["null"] = null_value;
  doc["version"] = kVersion;
  json rep;
  rep["G"] = tw.n_dim1;
  rep["H"] = tw.n_dim2;
  rep["intersections"] = tw.n_intersections;
  rep["se_dim1"] = choice.se_dim1;
  rep["se_dim2"] = choice.se_dim2;
  if (choice.se_twoway)
    rep["se_twoway"] = *choice.se_twoway;
  else
    rep["se_twoway"] = nullptr;
  rep["psd"] = tw.psd_flag;
  rep["min_eigenvalue"] = tw.min_eigenvalue;
  rep["chosen"] = test_json(choice.test);
  rep["chosen_source"] = choice.source;
  rep["matrix"] = matrix_json(tw.matrix);
  doc["report"] = std::move(rep);

  std::ostringstream txt;
  txt << "two-way clustering: G = " << tw.n_dim1 << ", H = " << tw.n_dim2
      << ", intersections = " << tw.n_intersections << "\n"
      << "  se (dim 1)   = " << fmt(choice.se_dim1) << "\n"
      << "  se (dim 2)   = " << fmt(choice.se_dim2) << "\n"
      << "  se (two-way) = "
      << (choice.se_twoway ? fmt(*choice.se_twoway)
                           : std::string("undefined (diagonal <= 0)"))
      << "\n"
      << "  psd = " << (tw.psd_flag ? "yes" : "NO") << ", min eigenvalue = "
      << fmt(tw.min_eigenvalue) << "\n"
      << "  chosen: " << choice.source << ", se = " << fmt(choice.test.se)
      << ", t = " << fmt(choice.test.t_stat) << ", p = "
      << fmt(choice.test.p_value) << " (dof = " << choice.test.dof << ")\n";
  emit(o, doc, txt.str(), out);
  return 0;
}

// -------------------------------------------------------------- diagnose

int cmd_diagnose(const CommonOpts& o, const std::string& coef,
                 std::ostream& out) {
  const ClusteredDataset d = load_from(o);
  const ClusterBlocks b = build_blocks(d);
  const FitResult f = ols_fit(d, b);
  const int j = d.column_index(coef);
  const RedFlagReport rep = red_flag_report(d, f, j);

  json doc;
  doc["command"] = "diagnose";
  doc["config"] = config_json(o);
  doc["config"]["coef"] = coef;
  doc["version"] = kVersion;
  json r;
  r["G"] = rep.G;
  r["N"] = rep.N;
  r["cluster_sizes"] = {{"min", rep.min_ng},
                        {"median", rep.median_ng},
                        {"max", rep.max_ng},
                        {"largest_share", rep.largest_share}};
  if (rep.G1 >= 0) {
    r["G1"] = rep.G1;
    r["G0"] = rep.G0;
  }
  json lev;
  lev["per_cluster"] = std::vector<double>(
      rep.leverage.leverage.data(),
      rep.leverage.leverage.data() + rep.leverage.leverage.size());
  lev["scaled_variance"] = rep.leverage.scaled_variance;
  lev["effective_clusters"] = rep.leverage.effective_clusters;
  lev["convention"] = "G*(0), cv-squared convention";
  r["partial_leverage"] = std::move(lev);
  r["cluster_variances"] = {
      {"sigma2", rep.variance_profile.sigma2},
      {"coef_variation", rep.variance_profile.coef_variation}};
  if (rep.treatment) {
    r["treatment_variance"] = {{"eta1", rep.treatment->eta1},
                               {"eta2", rep.treatment->eta2},
                               {"ratio", rep.treatment->ratio},
                               {"p", rep.treatment->test.p_value}};
  } else if (rep.treatment_error) {
    r["treatment_variance"] = {{"error", *rep.treatment_error}};
  }
  if (rep.omit_one) {
    r["omit_one"] = {{"delta", rep.omit_one->delta},
                     {"iqr", rep.omit_one->iqr},
                     {"flagged", rep.omit_one->flagged},
                     {"max_cluster", rep.omit_one->max_cluster}};
  } else if (rep.omit_one_error) {
    r["omit_one"] = {{"error", *rep.omit_one_error}};
  }
  r["flags"] = rep.flags;
  r["thresholds"] = {
      {"min_clusters", rep.thresholds.min_clusters},
      {"min_treated", rep.thresholds.min_treated},
      {"max_cluster_share", rep.thresholds.max_cluster_share},
      {"min_effective_ratio", rep.thresholds.min_effective_ratio},
      {"max_variance_cov", rep.thresholds.max_variance_cov},
      {"eta2_pvalue", rep.thresholds.eta2_pvalue},
      {"eta2_ratio", rep.thresholds.eta2_ratio},
      {"omit_iqr_multiple", rep.thresholds.omit_iqr_multiple}};
  doc["report"] = std::move(r);

  std::ostringstream txt;
  txt << "diagnostics for coefficient " << coef << "\n";
  txt << "  G = " << rep.G << ", N = " << rep.N << ", cluster sizes "
      << rep.min_ng << " / " << fmt(rep.median_ng) << " / " << rep.max_ng
      << " (min/median/max), largest share = " << fmt(rep.largest_share)
      << "\n";
  if (rep.G1 >= 0)
    txt << "  treated clusters G1 = " << rep.G1 << ", controls G0 = "
        << rep.G0 << "\n";
  txt << "  partial leverage: V_s = " << fmt(rep.leverage.scaled_variance)
      << ", G*(0) = " << fmt(rep.leverage.effective_clusters)
      << " of " << rep.G << "\n";
  txt << "  residual-variance spread (cv): "
      << fmt(rep.variance_profile.coef_variation) << "\n";
  if (rep.treatment)
    txt << "  treated-vs-control variance: eta2 = "
        << fmt(rep.treatment->eta2) << " (p = "
        << fmt(rep.treatment->test.p_value) << ", ratio = "
        << fmt(rep.treatment->ratio) << ")\n";
  if (rep.omit_one && rep.omit_one->max_cluster >= 0)
    txt << "  largest omit-one shift: cluster " << rep.omit_one->max_cluster
        << " (delta = " << fmt(rep.omit_one->delta[rep.omit_one->max_cluster])
        << ")\n";
  if (rep.flags.empty()) {
    txt << "  no red flags\n";
  } else {
    txt << "  RED FLAGS:";
    for (const auto& fl : rep.flags) txt << " " << fl;
    txt << "\n";
  }
  emit(o, doc, txt.str(), out);
  return 0;
}

// ------------------------------------------------------------------- mc

int cmd_mc(const CommonOpts& o, const std::string& rho_s, long R,
           const std::string& methods_s, const std::string& outcome_s,
           const std::string& coef, const std::string& beta0_s, long boot_B,
           const std::string& weights_s, double alpha, std::uint64_t seed,
           std::ostream& out) {
  const ClusteredDataset d = load_from(o);
  McDesign design;
  design.rho_grid.clear();
  for (const auto& r : split_list(rho_s)) design.rho_grid.push_back(std::stod(r));
  design.R = R;
  design.methods = split_list(methods_s);
  design.outcome =
      outcome_s == "binary" ? OutcomeMode::BINARY : OutcomeMode::CONTINUOUS;
  design.beta0_from_fit = beta0_s == "fitted";
  design.alpha = alpha;
  design.seed = seed;
  design.boot_B = boot_B;
  if (!weights_s.empty()) design.boot_weights = parse_weight_dist(weights_s);
  design.threads = o.threads;
  design.coef_index = coef.empty()
                          ? (d.treatment_col ? *d.treatment_col : 0)
                          : d.column_index(coef);

  const SimReport rep = run_monte_carlo(d, design);

  json doc;
  doc["command"] = "mc";
  doc["config"] = config_json(o);
  doc["config"]["rho"] = rho_s;
  doc["config"]["R"] = R;
  doc["config"]["methods"] = methods_s;
  doc["config"]["outcome"] = outcome_s;
  doc["config"]["beta0"] = beta0_s;
  doc["config"]["B"] = boot_B;
  doc["config"]["alpha"] = alpha;
  doc["config"]["seed"] = seed;
  doc["config"]["coef"] = d.column_names[design.coef_index];
  doc["version"] = kVersion;
  doc["report"] = sim_report_json(rep);
  emit(o, doc, sim_report_text(rep), out);
  return 0;
}

// -------------------------------------------------------------- placebo

int cmd_placebo(const CommonOpts& o, const std::string& mode_s,
                const std::string& strategy_s, long R,
                const std::string& methods_s, const std::string& coef,
                long boot_B, const std::string& weights_s, double alpha,
                std::uint64_t seed, std::ostream& out) {
  const ClusteredDataset d = load_from(o);
  PlaceboDesign design;
  if (mode_s == "add")
    design.modes = {PlaceboMode::ADD};
  else if (mode_s == "replace")
    design.modes = {PlaceboMode::REPLACE};
  else
    design.modes = {PlaceboMode::ADD, PlaceboMode::REPLACE};

  std::string strat = strategy_s;
  if (strat.rfind("cluster", 0) == 0) {
    design.strategy = PlaceboStrategy::CLUSTER_LEVEL;
    const auto colon = strat.find(':');
    if (colon != std::string::npos)
      design.treated_clusters = std::stoi(strat.substr(colon + 1));
  } else if (strat == "within") {
    design.strategy = PlaceboStrategy::WITHIN_CLUSTER;
  } else if (strat == "enumerate") {
    design.strategy = PlaceboStrategy::ENUMERATE_ALL;
  } else {
    throw err_invalid_plan("unknown placebo strategy: " + strategy_s);
  }
  design.R = R;
  design.methods = split_list(methods_s);
  design.alpha = alpha;
  design.seed = seed;
  design.boot_B = boot_B;
  if (!weights_s.empty()) design.boot_weights = parse_weight_dist(weights_s);
  design.threads = o.threads;
  design.coef_index = coef.empty()
                          ? (d.treatment_col ? *d.treatment_col : 0)
                          : d.column_index(coef);

  const SimReport rep = run_placebo_study(d, design);

  json doc;
  doc["command"] = "placebo";
  doc["config"] = config_json(o);
  doc["config"]["mode"] = mode_s;
  doc["config"]["strategy"] = strategy_s;
  doc["config"]["R"] = R;
  doc["config"]["methods"] = methods_s;
  doc["config"]["B"] = boot_B;
  doc["config"]["alpha"] = alpha;
  doc["config"]["seed"] = seed;
  doc["config"]["coef"] = d.column_names[design.coef_index];
  doc["version"] = kVersion;
  doc["report"] = sim_report_json(rep);
  emit(o, doc, sim_report_text(rep), out);
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out,
                std::ostream& err) {
  CLI::App app{"cluster-robust inference toolkit"};
  app.set_version_flag("--version", std::string("clusterkit ") + kVersion);
  app.require_subcommand(1);

  CommonOpts fit_o;
  auto* fit_cmd = app.add_subcommand("fit", "OLS with CV1 and CV3 errors");
  add_data_options(fit_cmd, fit_o);

  CommonOpts vcov_o;
  std::string vcov_kind = "cv1", vcov_coef;
  double vcov_null = 0.0;
  auto* vcov_cmd = app.add_subcommand("vcov", "one variance estimator");
  add_data_options(vcov_cmd, vcov_o);
  vcov_cmd->add_option("--kind", vcov_kind, "cv1|cv2|cv3|hc1|hc2|hc3")
      ->check(CLI::IsMember({"cv1", "cv2", "cv3", "hc1", "hc2", "hc3"}));
  vcov_cmd->add_option("--coef", vcov_coef, "restrict output to one coefficient");
  vcov_cmd->add_option("--null", vcov_null, "null value");

  CommonOpts boot_o;
  std::string boot_variant = "wcr-c", boot_weights, boot_coef;
  long boot_B = 9999;
  std::uint64_t boot_seed = 1;
  double boot_null = 0.0;
  bool boot_enum = false;
  auto* boot_cmd = app.add_subcommand("boot", "bootstrap inference");
  add_data_options(boot_cmd, boot_o);
  boot_cmd->add_option("--variant", boot_variant,
                       "pairs|wcu-c|wcu-s|wcr-c|wcr-s");
  boot_cmd->add_option("--B", boot_B, "bootstrap replications");
  boot_cmd->add_option("--weights", boot_weights, "rademacher|webb6");
  boot_cmd->add_option("--seed", boot_seed, "rng seed");
  boot_cmd->add_option("--coef", boot_coef, "coefficient")->required();
  boot_cmd->add_option("--null", boot_null, "null value");
  boot_cmd->add_flag("--enumerate", boot_enum, "full Rademacher enumeration");

  CommonOpts sv_o;
  std::string sv_coef, sv_fine, sv_coarse;
  long sv_boot = 0;
  std::uint64_t sv_seed = 1;
  auto* sv_cmd = app.add_subcommand("svtest", "score-variance clustering test");
  add_data_options(sv_cmd, sv_o, /*need_cluster=*/false);
  sv_cmd->add_option("--coef", sv_coef, "coefficient")->required();
  sv_cmd->add_option("--fine", sv_fine, "fine cluster column")->required();
  sv_cmd->add_option("--coarse", sv_coarse, "coarse cluster column")
      ->required();
  sv_cmd->add_option("--boot", sv_boot, "bootstrap replications (0 = off)");
  sv_cmd->add_option("--seed", sv_seed, "rng seed");

  CommonOpts tw_o;
  std::string tw_coef;
  double tw_null = 0.0;
  auto* tw_cmd = app.add_subcommand("twoway", "two-way clustered variance");
  add_data_options(tw_cmd, tw_o);
  tw_cmd->add_option("--coef", tw_coef, "coefficient")->required();
  tw_cmd->add_option("--null", tw_null, "null value");

  CommonOpts diag_o;
  std::string diag_coef;
  auto* diag_cmd = app.add_subcommand("diagnose", "cluster heterogeneity");
  add_data_options(diag_cmd, diag_o);
  diag_cmd->add_option("--coef", diag_coef, "coefficient")->required();

  CommonOpts mc_o;
  std::string mc_rho = "0", mc_methods = "cv1,cv3", mc_outcome = "continuous";
  std::string mc_coef, mc_beta0 = "zero", mc_weights;
  long mc_R = 1000, mc_B = 399;
  double mc_alpha = 0.05;
  std::uint64_t mc_seed = 1;
  auto* mc_cmd = app.add_subcommand("mc", "targeted Monte Carlo study");
  add_data_options(mc_cmd, mc_o);
  mc_cmd->add_option("--rho", mc_rho, "comma list of intra-cluster rho");
  mc_cmd->add_option("--R", mc_R, "replications");
  mc_cmd->add_option("--methods", mc_methods, "comma list of methods");
  mc_cmd->add_option("--outcome", mc_outcome, "continuous|binary")
      ->check(CLI::IsMember({"continuous", "binary"}));
  mc_cmd->add_option("--coef", mc_coef, "tested coefficient");
  mc_cmd->add_option("--beta0", mc_beta0, "zero|fitted")
      ->check(CLI::IsMember({"zero", "fitted"}));
  mc_cmd->add_option("--B", mc_B, "bootstrap replications per test");
  mc_cmd->add_option("--weights", mc_weights, "rademacher|webb6");
  mc_cmd->add_option("--alpha", mc_alpha, "test level");
  mc_cmd->add_option("--seed", mc_seed, "rng seed");

  CommonOpts pl_o;
  std::string pl_mode = "both", pl_strategy = "cluster";
  std::string pl_methods = "cv1,cv3", pl_coef, pl_weights;
  long pl_R = 1000, pl_B = 399;
  double pl_alpha = 0.05;
  std::uint64_t pl_seed = 1;
  auto* pl_cmd = app.add_subcommand("placebo", "placebo-regression study");
  add_data_options(pl_cmd, pl_o);
  pl_cmd->add_option("--mode", pl_mode, "add|replace|both")
      ->check(CLI::IsMember({"add", "replace", "both"}));
  pl_cmd->add_option("--strategy", pl_strategy,
                     "cluster[:G1] | within | enumerate");
  pl_cmd->add_option("--R", pl_R, "replications");
  pl_cmd->add_option("--methods", pl_methods, "comma list of methods");
  pl_cmd->add_option("--coef", pl_coef, "treatment coefficient");
  pl_cmd->add_option("--B", pl_B, "bootstrap replications per test");
  pl_cmd->add_option("--weights", pl_weights, "rademacher|webb6");
  pl_cmd->add_option("--alpha", pl_alpha, "test level");
  pl_cmd->add_option("--seed", pl_seed, "rng seed");

  try {
    const std::vector<std::string> expanded = apply_config_file(args);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const DataError& e) {
    err << "data error [" << e.code() << "]: " << e.what() << "\n";
    return 2;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "clusterkit " << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(fit_o, out);
    if (vcov_cmd->parsed())
      return cmd_vcov(vcov_o, vcov_kind, vcov_coef, vcov_null, out);
    if (boot_cmd->parsed())
      return cmd_boot(boot_o, boot_variant, boot_B, boot_weights, boot_seed,
                      boot_coef, boot_null, boot_enum, out);
    if (sv_cmd->parsed())
      return cmd_svtest(sv_o, sv_coef, sv_fine, sv_coarse, sv_boot, sv_seed,
                        out);
    if (tw_cmd->parsed()) return cmd_twoway(tw_o, tw_coef, tw_null, out);
    if (diag_cmd->parsed()) return cmd_diagnose(diag_o, diag_coef, out);
    if (mc_cmd->parsed())
      return cmd_mc(mc_o, mc_rho, mc_R, mc_methods, mc_outcome, mc_coef,
                    mc_beta0, mc_B, mc_weights, mc_alpha, mc_seed, out);
    if (pl_cmd->parsed())
      return cmd_placebo(pl_o, pl_mode, pl_strategy, pl_R, pl_methods, pl_coef,
                         pl_B, pl_weights, pl_alpha, pl_seed, out);
  } catch (const DataError& e) {
    err << "data error [" << e.code() << "]: " << e.what() << "\n";
    return 2;
  } catch (const MethodError& e) {
    err << "method error [" << e.code() << "]: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  err << "error: no subcommand\n";
  return 1;
}

}  // namespace clusterkit
