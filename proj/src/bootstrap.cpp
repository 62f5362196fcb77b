#include "clusterkit/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "clusterkit/errors.hpp"
#include "clusterkit/parallel.hpp"
#include "clusterkit/rng.hpp"
#include "clusterkit/stats.hpp"

namespace clusterkit {

namespace {

constexpr std::uint64_t kWildTag = 0x77696c64;   // stream tag: wild weights
constexpr std::uint64_t kPairsTag = 0x70616972;  // stream tag: pairs indices

const double kSqrtHalf = std::sqrt(0.5);
const double kSqrtThreeHalves = std::sqrt(1.5);

double weight_from_u64(WeightDist dist, std::uint64_t u) {
  if (dist == WeightDist::RADEMACHER) return (u >> 63) ? 1.0 : -1.0;
  // Webb six-point: +-sqrt(1/2), +-1, +-sqrt(3/2), each with probability 1/6.
  const double x = static_cast<double>(u >> 11) * 0x1.0p-53;
  switch (static_cast<int>(x * 6.0)) {
    case 0: return -kSqrtThreeHalves;
    case 1: return -1.0;
    case 2: return -kSqrtHalf;
    case 3: return kSqrtHalf;
    case 4: return 1.0;
    default: return kSqrtThreeHalves;
  }
}

Eigen::VectorXd enumerated_rademacher(int G, long index) {
  Eigen::VectorXd v(G);
  for (int g = 0; g < G; ++g) v(g) = ((index >> g) & 1) ? 1.0 : -1.0;
  return v;
}

double sample_sd(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (static_cast<double>(x.size()) - 1.0));
}

double cv1_se_of(const ClusterBlocks& b, const FitResult& f, int j) {
  const VarianceEstimate ve = cv1(b, f);
  if (!(ve.matrix(j, j) > 0.0)) throw err_zero_variance(j);
  return std::sqrt(ve.matrix(j, j));
}

}  // namespace

const char* bootstrap_variant_name(BootstrapVariant v) {
  switch (v) {
    case BootstrapVariant::PAIRS: return "pairs";
    case BootstrapVariant::WCU_C: return "wcu-c";
    case BootstrapVariant::WCU_S: return "wcu-s";
    case BootstrapVariant::WCR_C: return "wcr-c";
    case BootstrapVariant::WCR_S: return "wcr-s";
  }
  return "?";
}

BootstrapVariant parse_bootstrap_variant(const std::string& s) {
  if (s == "pairs") return BootstrapVariant::PAIRS;
  if (s == "wcu-c") return BootstrapVariant::WCU_C;
  if (s == "wcu-s") return BootstrapVariant::WCU_S;
  if (s == "wcr-c") return BootstrapVariant::WCR_C;
  if (s == "wcr-s") return BootstrapVariant::WCR_S;
  throw err_invalid_plan("unknown bootstrap variant: " + s);
}

WeightDist parse_weight_dist(const std::string& s) {
  if (s == "rademacher") return WeightDist::RADEMACHER;
  if (s == "webb6") return WeightDist::WEBB6;
  throw err_invalid_plan("unknown weight distribution: " + s);
}

Eigen::VectorXd draw_weights(WeightDist dist, int G, long replicate,
                             std::uint64_t seed) {
  Eigen::VectorXd v(G);
  const std::uint64_t stream =
      stream_id(kWildTag, static_cast<std::uint64_t>(replicate));
  for (int g = 0; g < G; ++g)
    v(g) = weight_from_u64(dist, draw_u64_at(seed, stream, g));
  return v;
}

WildEngine::WildEngine(const Eigen::LDLT<Eigen::MatrixXd>& xtx_factor,
                       const std::vector<Eigen::MatrixXd>& xtx_g,
                       std::ptrdiff_t n_obs, int j)
    : xtx_g_(&xtx_g), factor_(&xtx_factor), j_(j) {
  const int G = static_cast<int>(xtx_g.size());
  const std::ptrdiff_t k = xtx_g.front().rows();
  const double n = static_cast<double>(n_obs);
  cv1_scalar_ =
      G * (n - 1.0) / ((G - 1.0) * (n - static_cast<double>(k)));
  Eigen::VectorXd ej = Eigen::VectorXd::Zero(k);
  ej(j) = 1.0;
  a_j_ = xtx_factor.solve(ej);
  r_g_.reserve(G);
  for (int g = 0; g < G; ++g) r_g_.push_back(xtx_g[g] * a_j_);
}

void WildEngine::set_scores(const std::vector<Eigen::VectorXd>& scores) {
  const int G = static_cast<int>(scores.size());
  p_g_.resize(G);
  q_g_.resize(G);
  for (int g = 0; g < G; ++g) {
    p_g_[g] = factor_->solve(scores[g]);
    q_g_[g] = a_j_.dot(scores[g]);
  }
}

WildEngine::Run WildEngine::run(const BootstrapPlan& plan) const {
  const int G = static_cast<int>(p_g_.size());
  long B = plan.B;
  if (plan.enumerate) {
    if (plan.weights != WeightDist::RADEMACHER || G > 30)
      throw err_invalid_plan(
          "enumeration requires Rademacher weights and G <= 30");
    B = 1L << G;
  }
  std::vector<double> t(B), d(B);
  std::vector<char> ok(B);
  const std::ptrdiff_t k = p_g_[0].size();
  parallel_for(static_cast<std::size_t>(B), plan.threads, [&](std::size_t bi) {
    const Eigen::VectorXd v =
        plan.enumerate
            ? enumerated_rademacher(G, static_cast<long>(bi))
            : draw_weights(plan.weights, G, static_cast<long>(bi), plan.seed);
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(k);
    for (int g = 0; g < G; ++g) delta.noalias() += v(g) * p_g_[g];
    double meat = 0.0;
    for (int g = 0; g < G; ++g) {
      const double term = v(g) * q_g_[g] - r_g_[g].dot(delta);
      meat += term * term;
    }
    const double var = cv1_scalar_ * meat;
    d[bi] = delta(j_);
    if (!(var > 0.0) || !std::isfinite(var)) {
      ok[bi] = 0;
      return;
    }
    t[bi] = delta(j_) / std::sqrt(var);
    ok[bi] = std::isfinite(t[bi]) ? 1 : 0;
  });
  Run out;
  out.t_star.reserve(B);
  out.delta_star.reserve(B);
  for (long bi = 0; bi < B; ++bi) {
    if (ok[bi]) {
      out.t_star.push_back(t[bi]);
      out.delta_star.push_back(d[bi]);
      ++out.used;
    } else {
      ++out.dropped;
    }
  }
  return out;
}

double symmetric_pvalue(double t_obs, const std::vector<double>& t_star) {
  // Strict inequality; enumeration ties count as non-rejections.
  long count = 0;
  for (double t : t_star)
    if (std::fabs(t) > std::fabs(t_obs)) ++count;
  return static_cast<double>(count) / static_cast<double>(t_star.size());
}

double equal_tail_pvalue(double t_obs, const std::vector<double>& t_star) {
  long le = 0, ge = 0;
  for (double t : t_star) {
    if (t <= t_obs) ++le;
    if (t >= t_obs) ++ge;
  }
  const double p = 2.0 * static_cast<double>(std::min(le, ge)) /
                   static_cast<double>(t_star.size());
  return std::min(p, 1.0);
}

std::pair<double, double> studentized_ci(double beta_j, double se,
                                         const std::vector<double>& t_star,
                                         double alpha) {
  const long B = static_cast<long>(t_star.size());
  if (B + 1 < static_cast<long>(1.0 / alpha))
    std::cerr << "clusterkit: warning: B = " << B << " is small for level "
              << alpha << " studentized intervals\n";
  std::vector<double> sorted = t_star;
  std::sort(sorted.begin(), sorted.end());
  long r_lo = static_cast<long>(std::floor((B + 1) * alpha / 2.0));
  r_lo = std::max(1L, std::min(r_lo, B));
  const long r_hi = B + 1 - r_lo;
  const double c_lo = sorted[r_lo - 1];
  const double c_hi = sorted[r_hi - 1];
  return {beta_j - se * c_hi, beta_j - se * c_lo};
}

BootstrapOutcome wild_bootstrap(const BootstrapPlan& plan,
                                const ClusterBlocks& b, const FitResult& f,
                                const RestrictedFit* rf,
                                const ModifiedScores* ms, int j, double beta0,
                                double alpha) {
  if (!is_wild(plan.variant))
    throw err_invalid_plan("wild_bootstrap called with the pairs variant");

  const std::vector<Eigen::VectorXd>* scores = nullptr;
  if (is_score_variant(plan.variant)) {
    if (!ms) throw err_invalid_plan("-S variants need modified scores");
    for (std::size_t g = 0; g < ms->computable.size(); ++g)
      if (!ms->computable[g]) throw err_not_computable(g);
    scores = &ms->s;
  } else if (is_restricted(plan.variant)) {
    if (!rf) throw err_invalid_plan("-R variants need a restricted fit");
    scores = &rf->scores_tilde;
  } else {
    scores = &f.scores;
  }
  if (is_restricted(plan.variant)) {
    if (!rf) throw err_invalid_plan("-R variants need a restricted fit");
    beta0 = rf->restriction.value;
  }

  const double se = cv1_se_of(b, f, j);
  BootstrapOutcome out;
  out.t_obs = (f.beta_hat(j) - beta0) / se;

  WildEngine engine(f.xtx_factor, b.xtx_g, b.n_obs, j);
  engine.set_scores(*scores);
  WildEngine::Run stats = engine.run(plan);
  if (stats.used == 0)
    throw err_too_many_degenerate(stats.dropped, stats.dropped);

  out.t_star = std::move(stats.t_star);
  out.replicates_used = stats.used;
  out.dropped = stats.dropped;
  out.p_sym = symmetric_pvalue(out.t_obs, out.t_star);
  out.p_equal_tail = equal_tail_pvalue(out.t_obs, out.t_star);
  out.boot_se = sample_sd(stats.delta_star);
  if (!is_restricted(plan.variant)) {
    std::tie(out.ci_lower, out.ci_upper) =
        studentized_ci(f.beta_hat(j), se, out.t_star, alpha);
    out.ci_valid = true;
  }
  return out;
}

BootstrapOutcome pairs_bootstrap(const BootstrapPlan& plan,
                                 const ClusterBlocks& b, const FitResult& f,
                                 int j, double beta0, double alpha) {
  const int G = b.n_clusters();
  const std::ptrdiff_t k = b.n_coef();
  const long B = plan.B;
  // A zero observed CV1 variance (all scores zero) still admits the pairs
  // resampling distribution, so it is reported rather than rejected.
  const VarianceEstimate v1 = cv1(b, f);
  const double se = std::sqrt(std::max(v1.matrix(j, j), 0.0));

  std::vector<double> t(B), beta_star(B);
  std::vector<char> ok(B);
  parallel_for(static_cast<std::size_t>(B), plan.threads, [&](std::size_t bi) {
    const std::uint64_t stream =
        stream_id(kPairsTag, static_cast<std::uint64_t>(bi));
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(k);
    std::ptrdiff_t n_star = 0;
    std::vector<int> picks(G);
    for (int g = 0; g < G; ++g) {
      const double u = draw_uniform_at(plan.seed, stream, g);
      const int pick = std::min(G - 1, static_cast<int>(u * G));
      picks[g] = pick;
      xtx += b.xtx_g[pick];
      xty += b.xty_g[pick];
      n_star += b.cluster_size(pick);
    }
    Eigen::LDLT<Eigen::MatrixXd> factor(xtx);
    if (!ldlt_full_rank(factor)) {
      ok[bi] = 0;
      return;
    }
    const Eigen::VectorXd bstar = factor.solve(xty);
    Eigen::VectorXd ej = Eigen::VectorXd::Zero(k);
    ej(j) = 1.0;
    const Eigen::VectorXd a_j = factor.solve(ej);
    double meat = 0.0;
    for (int g = 0; g < G; ++g) {
      const Eigen::VectorXd sg = b.xty_g[picks[g]] - b.xtx_g[picks[g]] * bstar;
      const double term = a_j.dot(sg);
      meat += term * term;
    }
    const double n = static_cast<double>(n_star);
    const double var =
        G * (n - 1.0) / ((G - 1.0) * (n - static_cast<double>(k))) * meat;
    const double num = bstar(j) - f.beta_hat(j);
    beta_star[bi] = bstar(j);
    if (!(var > 0.0) || !std::isfinite(var)) {
      // A resample that reproduces beta_hat exactly has a 0/0 statistic;
      // count it as t* = 0 rather than dropping it.
      if (std::fabs(num) <= 1e-12 * std::max(1.0, std::fabs(f.beta_hat(j)))) {
        t[bi] = 0.0;
        ok[bi] = 1;
      } else {
        ok[bi] = 0;
      }
      return;
    }
    t[bi] = num / std::sqrt(var);
    ok[bi] = std::isfinite(t[bi]) ? 1 : 0;
  });

  BootstrapOutcome out;
  const double num_obs = f.beta_hat(j) - beta0;
  out.t_obs = num_obs == 0.0 ? 0.0 : num_obs / se;
  std::vector<double> kept_beta;
  for (long bi = 0; bi < B; ++bi) {
    if (ok[bi]) {
      out.t_star.push_back(t[bi]);
      kept_beta.push_back(beta_star[bi]);
    } else {
      ++out.dropped;
    }
  }
  out.replicates_used = static_cast<long>(out.t_star.size());
  if (out.dropped * 10 > B) throw err_too_many_degenerate(out.dropped, B);
  out.p_sym = symmetric_pvalue(out.t_obs, out.t_star);
  out.p_equal_tail = equal_tail_pvalue(out.t_obs, out.t_star);
  out.boot_se = sample_sd(kept_beta);
  std::tie(out.ci_lower, out.ci_upper) =
      studentized_ci(f.beta_hat(j), se, out.t_star, alpha);
  out.ci_valid = true;
  return out;
}

InvertedInterval invert_restricted_ci(const BootstrapPlan& plan,
                                      const ClusteredDataset& d,
                                      const ClusterBlocks& b,
                                      const FitResult& f, int j,
                                      double alpha) {
  if (!is_restricted(plan.variant))
    throw err_invalid_plan("interval inversion needs a WCR-* variant");
  const int G = b.n_clusters();
  const double se = cv1_se_of(b, f, j);
  const double beta_hat_j = f.beta_hat(j);

  std::optional<RestrictedScoreTransform> transform;
  if (plan.variant == BootstrapVariant::WCR_S) transform.emplace(d, b, j);

  WildEngine engine(f.xtx_factor, b.xtx_g, b.n_obs, j);
  long used = 0;
  // Equal-tail P value at a trial beta0; the (seed, b, g) weight schedule
  // is identical at every trial.
  const auto p_at = [&](double beta0) {
    const RestrictedFit rf = restricted_fit(d, b, Restriction{j, beta0});
    if (transform) {
      const ModifiedScores ms = transform->apply(d, rf.residuals_tilde);
      for (std::size_t g = 0; g < ms.computable.size(); ++g)
        if (!ms.computable[g]) throw err_not_computable(g);
      engine.set_scores(ms.s);
    } else {
      engine.set_scores(rf.scores_tilde);
    }
    WildEngine::Run stats = engine.run(plan);
    if (stats.used == 0)
      throw err_too_many_degenerate(stats.dropped, stats.dropped);
    used = stats.used;
    const double t_obs = (beta_hat_j - beta0) / se;
    return equal_tail_pvalue(t_obs, stats.t_star);
  };

  const double w = t_quantile(1.0 - alpha / 2.0, G - 1.0) * se;
  const double tol = 1e-4 * se;
  const auto solve_side = [&](double sign) {
    double inside = beta_hat_j;  // p(inside) >= alpha along the search
    double outside = 0.0;
    bool bracketed = false;
    double p_edge = 1.0;
    for (double m : {1.0, 2.0, 4.0, 8.0}) {
      outside = beta_hat_j + sign * m * w;
      p_edge = p_at(outside);
      if (p_edge < alpha) {
        bracketed = true;
        break;
      }
      inside = outside;
    }
    if (!bracketed) throw err_no_bracket(p_edge);
    while (std::fabs(outside - inside) > tol) {
      const double mid = 0.5 * (inside + outside);
      if (p_at(mid) >= alpha)
        inside = mid;
      else
        outside = mid;
    }
    return 0.5 * (inside + outside);
  };

  InvertedInterval iv;
  iv.lower = solve_side(-1.0);
  iv.upper = solve_side(+1.0);
  iv.replicates_used = used;
  return iv;
}

}  // namespace clusterkit
