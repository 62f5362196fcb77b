#include "clusterkit/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_set>

#include "clusterkit/errors.hpp"
#include "clusterkit/parallel.hpp"
#include "clusterkit/rng.hpp"
#include "clusterkit/stats.hpp"

namespace clusterkit {

namespace {

constexpr std::uint64_t kReTag = 0x72652d64;
constexpr std::uint64_t kPlaceboTag = 0x706c6142;
constexpr std::uint64_t kBootTag = 0x6d63626f;

// ---------------------------------------------------------------------
// Method evaluation shared by the Monte Carlo and placebo harnesses.

enum class MethodId {
  HC1, HC2, HC3, CV1, CV2, CV3, PAIRS, WCU_C, WCU_S, WCR_C, WCR_S
};

struct MethodSpec {
  std::string name;
  MethodId id;
};

const std::vector<MethodSpec>& method_table() {
  static const std::vector<MethodSpec> table = {
      {"hc1", MethodId::HC1},     {"hc2", MethodId::HC2},
      {"hc3", MethodId::HC3},     {"cv1", MethodId::CV1},
      {"cv2", MethodId::CV2},     {"cv3", MethodId::CV3},
      {"pairs", MethodId::PAIRS}, {"wcu-c", MethodId::WCU_C},
      {"wcu-s", MethodId::WCU_S}, {"wcr-c", MethodId::WCR_C},
      {"wcr-s", MethodId::WCR_S}};
  return table;
}

MethodId parse_method(const std::string& name) {
  for (const auto& m : method_table())
    if (m.name == name) return m.id;
  throw err_invalid_plan("unknown method: " + name);
}

bool needs_jackknife(MethodId id) {
  return id == MethodId::CV3 || id == MethodId::WCU_S;
}

// Reusable design-level precomputations (everything that depends on X and
// the clustering only). For the placebo harness these are rebuilt per
// replicate because X changes.
struct DesignCache {
  ClusterBlocks blocks;
  Eigen::LDLT<Eigen::MatrixXd> factor;
  std::optional<JackknifeFactors> jack;
  std::optional<RestrictedScoreTransform> wcr_s_transform;
  std::vector<Eigen::MatrixXd> cv2_t_g;  // X_g' M_gg^{-1/2}, empty if unused
  std::vector<char> cv2_flagged;

  DesignCache(const ClusteredDataset& d, int j,
              const std::vector<MethodId>& methods) {
    blocks = build_blocks(d);
    factor = checked_ldlt(blocks.xtx, "X'X is rank deficient");
    bool want_jack = false, want_wcrs = false, want_cv2 = false;
    for (MethodId m : methods) {
      want_jack = want_jack || needs_jackknife(m);
      want_wcrs = want_wcrs || m == MethodId::WCR_S;
      want_cv2 = want_cv2 || m == MethodId::CV2;
    }
    if (want_jack) jack.emplace(blocks);
    if (want_wcrs) wcr_s_transform.emplace(d, blocks, j);
    if (want_cv2) {
      const int G = blocks.n_clusters();
      cv2_t_g.resize(G);
      cv2_flagged.assign(G, 0);
      for (int g = 0; g < G; ++g) {
        auto [lo, hi] = blocks.rows_g[g];
        const Eigen::MatrixXd xg = d.X.middleRows(lo, hi - lo);
        const Eigen::MatrixXd mgg = annihilator_block(xg, factor);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mgg);
        const Eigen::VectorXd& ev = es.eigenvalues();
        const double mx = ev.cwiseAbs().maxCoeff();
        Eigen::VectorXd inv_root = Eigen::VectorXd::Zero(ev.size());
        for (std::ptrdiff_t i = 0; i < ev.size(); ++i) {
          if (ev(i) < 1e-10 * std::max(1.0, mx))
            cv2_flagged[g] = 1;
          else
            inv_root(i) = 1.0 / std::sqrt(ev(i));
        }
        cv2_t_g[g] = xg.transpose() * es.eigenvectors() *
                     inv_root.asDiagonal() *
                     es.eigenvectors().transpose();
      }
    }
  }
};

// One simulated sample: fitted quantities plus lazily-shared derived ones.
struct Sample {
  const ClusteredDataset* d;
  const DesignCache* cache;
  ClusterBlocks blocks;  // xtx from the cache, xty for this sample
  FitResult fit;
  int j;
  double beta0;
  double alpha;
  long boot_B;
  WeightDist wdist;
  std::uint64_t boot_seed;

  std::optional<JackknifeSet> jk;
  std::optional<Eigen::VectorXd> beta_r;       // restricted at beta0
  std::optional<Eigen::VectorXd> resid_r;

  Sample(const ClusteredDataset& data, const DesignCache& c,
         const Eigen::VectorXd& y, int coef, double null_value, double a,
         long B, WeightDist w, std::uint64_t bseed)
      : d(&data), cache(&c), j(coef), beta0(null_value), alpha(a), boot_B(B),
        wdist(w), boot_seed(bseed) {
    blocks = c.blocks;
    const int G = blocks.n_clusters();
    for (int g = 0; g < G; ++g) {
      auto [lo, hi] = blocks.rows_g[g];
      blocks.xty_g[g] = data.X.middleRows(lo, hi - lo).transpose() *
                        y.segment(lo, hi - lo);
    }
    blocks.xty = Eigen::VectorXd::Zero(blocks.n_coef());
    for (int g = 0; g < G; ++g) blocks.xty += blocks.xty_g[g];
    fit.xtx_factor = c.factor;
    fit.beta_hat = c.factor.solve(blocks.xty);
    fit.residuals = y - data.X * fit.beta_hat;
    fit.scores.reserve(G);
    for (int g = 0; g < G; ++g)
      fit.scores.push_back(blocks.xty_g[g] - blocks.xtx_g[g] * fit.beta_hat);
  }

  const JackknifeSet& jackknife() {
    if (!jk) {
      if (cache->jack)
        jk = cache->jack->estimates(blocks, blocks.xty);
      else
        jk = jackknife_estimates(blocks, fit);
    }
    return *jk;
  }

  void ensure_restricted() {
    if (beta_r) return;
    beta_r = restricted_beta(blocks, Restriction{j, beta0});
    resid_r = fit.residuals + d->X * (fit.beta_hat - *beta_r);
  }

  double analytic_p(const VarianceEstimate& ve) const {
    return t_test(ve, fit, j, beta0, alpha).p_value;
  }

  double wild_p(BootstrapVariant variant) {
    std::vector<Eigen::VectorXd> scores;
    switch (variant) {
      case BootstrapVariant::WCU_C:
        scores = fit.scores;
        break;
      case BootstrapVariant::WCR_C: {
        ensure_restricted();
        const int G = blocks.n_clusters();
        scores.reserve(G);
        for (int g = 0; g < G; ++g)
          scores.push_back(blocks.xty_g[g] - blocks.xtx_g[g] * *beta_r);
        break;
      }
      case BootstrapVariant::WCU_S: {
        const JackknifeSet& set = jackknife();
        const ModifiedScores ms =
            modified_scores_unrestricted(blocks, fit, set);
        for (std::size_t g = 0; g < ms.computable.size(); ++g)
          if (!ms.computable[g]) throw err_not_computable(g);
        scores = ms.s;
        break;
      }
      case BootstrapVariant::WCR_S: {
        ensure_restricted();
        ModifiedScores ms;
        if (cache->wcr_s_transform) {
          ms = cache->wcr_s_transform->apply(*d, *resid_r);
        } else {
          RestrictedScoreTransform t(*d, blocks, j);
          ms = t.apply(*d, *resid_r);
        }
        for (std::size_t g = 0; g < ms.computable.size(); ++g)
          if (!ms.computable[g]) throw err_not_computable(g);
        scores = ms.s;
        break;
      }
      default:
        throw err_invalid_plan("not a wild variant");
    }
    const VarianceEstimate v1 = cv1(blocks, fit);
    if (!(v1.matrix(j, j) > 0.0)) throw err_zero_variance(j);
    const double t_obs = (fit.beta_hat(j) - beta0) / std::sqrt(v1.matrix(j, j));
    WildEngine engine(fit.xtx_factor, blocks.xtx_g, blocks.n_obs, j);
    engine.set_scores(scores);
    BootstrapPlan plan;
    plan.variant = variant;
    plan.B = boot_B;
    plan.weights = wdist;
    plan.seed = boot_seed;
    plan.threads = 1;
    const WildEngine::Run run = engine.run(plan);
    if (run.used == 0) throw err_too_many_degenerate(run.dropped, run.dropped);
    return symmetric_pvalue(t_obs, run.t_star);
  }

  double cv2_p() {
    if (!cache->cv2_t_g.empty()) {
      const int G = blocks.n_clusters();
      Eigen::MatrixXd filling =
          Eigen::MatrixXd::Zero(blocks.n_coef(), blocks.n_coef());
      for (int g = 0; g < G; ++g) {
        auto [lo, hi] = blocks.rows_g[g];
        const Eigen::VectorXd sg =
            cache->cv2_t_g[g] * fit.residuals.segment(lo, hi - lo);
        filling.noalias() += sg * sg.transpose();
      }
      const Eigen::MatrixXd half = fit.xtx_factor.solve(filling);
      VarianceEstimate ve;
      ve.matrix = fit.xtx_factor.solve(half.transpose()).transpose();
      ve.kind = VarianceKind::CV2;
      ve.effective_G = G;
      ve.dof = G - 1.0;
      return analytic_p(ve);
    }
    return analytic_p(cv2(*d, blocks, fit));
  }

  double pvalue(MethodId id) {
    switch (id) {
      case MethodId::HC1: {
        VarianceEstimate ve = hc_variance(*d, VarianceKind::HC1);
        return analytic_p(ve);
      }
      case MethodId::HC2: {
        VarianceEstimate ve = hc_variance(*d, VarianceKind::HC2);
        return analytic_p(ve);
      }
      case MethodId::HC3: {
        VarianceEstimate ve = hc_variance(*d, VarianceKind::HC3);
        return analytic_p(ve);
      }
      case MethodId::CV1:
        return analytic_p(cv1(blocks, fit));
      case MethodId::CV2:
        return cv2_p();
      case MethodId::CV3:
        return analytic_p(cv3(jackknife(), fit));
      case MethodId::PAIRS: {
        BootstrapPlan plan;
        plan.variant = BootstrapVariant::PAIRS;
        plan.B = boot_B;
        plan.weights = wdist;
        plan.seed = boot_seed;
        plan.threads = 1;
        return pairs_bootstrap(plan, blocks, fit, j, beta0, alpha).p_sym;
      }
      case MethodId::WCU_C: return wild_p(BootstrapVariant::WCU_C);
      case MethodId::WCU_S: return wild_p(BootstrapVariant::WCU_S);
      case MethodId::WCR_C: return wild_p(BootstrapVariant::WCR_C);
      case MethodId::WCR_S: return wild_p(BootstrapVariant::WCR_S);
    }
    throw err_invalid_plan("unhandled method");
  }
};

// Mean within-cluster pairwise correlation of the residuals.
double realized_intra_correlation(const ClusteredDataset& d,
                                  const Eigen::VectorXd& residuals) {
  double cross = 0.0, pairs = 0.0;
  for (int g = 0; g < d.n_clusters(); ++g) {
    auto [lo, hi] = d.cluster_range(g);
    const auto u = residuals.segment(lo, hi - lo);
    const double s = u.sum();
    cross += s * s - u.squaredNorm();
    const double ng = static_cast<double>(hi - lo);
    pairs += ng * (ng - 1.0);
  }
  const double sigma2 = residuals.squaredNorm() / d.n_obs();
  if (pairs == 0.0 || sigma2 == 0.0) return 0.0;
  return cross / pairs / sigma2;
}

std::string verdict_for(double rate, double lo, double hi) {
  if (rate > hi) return "over";
  if (rate < lo) return "under";
  return "reliable";
}

WeightDist default_weights(int G, const std::optional<WeightDist>& choice) {
  if (choice) return *choice;
  return G >= 10 ? WeightDist::RADEMACHER : WeightDist::WEBB6;
}

// log of the binomial coefficient.
double log_choose(double n, double k) {
  if (k < 0 || k > n) return -std::numeric_limits<double>::infinity();
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) -
         std::lgamma(n - k + 1.0);
}

std::uint64_t choose_u64(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t c = 1;
  for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

// r-th k-subset of {0..n-1} in lexicographic order.
std::vector<int> unrank_combination(int n, int k, std::uint64_t r) {
  std::vector<int> out;
  int next = 0;
  while (static_cast<int>(out.size()) < k) {
    const std::uint64_t block =
        choose_u64(n - next - 1, k - static_cast<int>(out.size()) - 1);
    if (r < block) {
      out.push_back(next);
      ++next;
    } else {
      r -= block;
      ++next;
    }
  }
  return out;
}

std::vector<char> treated_cluster_mask(const ClusteredDataset& d, int j) {
  std::vector<char> mask(d.n_clusters(), 0);
  for (int g = 0; g < d.n_clusters(); ++g) {
    auto [lo, hi] = d.cluster_range(g);
    for (std::ptrdiff_t i = lo; i < hi; ++i)
      if (d.X(i, j) != 0.0) {
        mask[g] = 1;
        break;
      }
  }
  return mask;
}

}  // namespace

std::vector<std::string> known_methods() {
  std::vector<std::string> names;
  for (const auto& m : method_table()) names.push_back(m.name);
  return names;
}

Eigen::VectorXd generate_re_disturbances(const std::vector<long>& sizes,
                                         double rho, std::uint64_t seed,
                                         long replicate, long design_point,
                                         double sigma_total) {
  if (rho < 0.0 || rho >= 1.0)
    throw err_invalid_plan("rho must lie in [0, 1)");
  long n = 0;
  for (long s : sizes) n += s;
  Eigen::VectorXd u(n);
  CounterRng rng(seed,
                 stream_id(kReTag, static_cast<std::uint64_t>(design_point),
                           static_cast<std::uint64_t>(replicate)));
  const double sd_v = std::sqrt(rho);
  const double sd_e = std::sqrt(1.0 - rho);
  long i = 0;
  for (long s : sizes) {
    const double v = sd_v * rng.next_normal();
    for (long r = 0; r < s; ++r)
      u(i++) = sigma_total * (v + sd_e * rng.next_normal());
  }
  return u;
}

Eigen::VectorXd binary_transform(const Eigen::VectorXd& u,
                                 const Eigen::VectorXd& fitted) {
  Eigen::VectorXd y(u.size());
  for (std::ptrdiff_t i = 0; i < u.size(); ++i)
    y(i) = normal_cdf(u(i)) >= fitted(i) ? 0.0 : 1.0;
  return y;
}

SimReport run_monte_carlo(const ClusteredDataset& d, const McDesign& design) {
  std::vector<MethodId> methods;
  for (const auto& name : design.methods) methods.push_back(parse_method(name));
  const int j = design.coef_index;
  const DesignCache cache(d, j, methods);
  const int G = d.n_clusters();
  const WeightDist wdist = default_weights(G, design.boot_weights);

  std::vector<long> sizes;
  for (int g = 0; g < G; ++g) sizes.push_back(d.cluster_size(g));

  // beta0 fixes the simulated truth and hence the null that is tested.
  Eigen::VectorXd beta0_vec = Eigen::VectorXd::Zero(d.n_coef());
  if (design.beta0_from_fit && design.outcome == OutcomeMode::CONTINUOUS) {
    const FitResult f = ols_fit(d, cache.blocks);
    beta0_vec = f.beta_hat;
  }
  Eigen::VectorXd fitted_binary;
  if (design.outcome == OutcomeMode::BINARY) {
    // Restricted LPM estimated once on the real data; reused throughout.
    const RestrictedFit rf =
        restricted_fit(d, cache.blocks, Restriction{j, 0.0});
    fitted_binary = d.y - rf.residuals_tilde;
    beta0_vec.setZero();
  }
  const double beta0_j = beta0_vec(j);
  const Eigen::VectorXd mean_y = d.X * beta0_vec;

  SimReport report;
  report.alpha = design.alpha;
  report.band_lower = design.band_lo * design.alpha;
  report.band_upper = design.band_hi * design.alpha;

  const std::size_t n_methods = methods.size();
  for (std::size_t dp = 0; dp < design.rho_grid.size(); ++dp) {
    const double rho = design.rho_grid[dp];
    std::vector<std::uint8_t> outcome(design.R * n_methods);
    std::vector<double> rho_hat(design.R);
    parallel_for(design.R, design.threads, [&](std::size_t rep) {
      const Eigen::VectorXd u = generate_re_disturbances(
          sizes, rho, design.seed, static_cast<long>(rep),
          static_cast<long>(dp), design.sigma_total);
      const Eigen::VectorXd y =
          design.outcome == OutcomeMode::BINARY
              ? binary_transform(u, fitted_binary)
              : Eigen::VectorXd(mean_y + u);
      Sample sample(d, cache, y, j, beta0_j, design.alpha, design.boot_B,
                    wdist,
                    stream_id(kBootTag ^ design.seed, dp, rep));
      rho_hat[rep] = realized_intra_correlation(d, sample.fit.residuals);
      for (std::size_t m = 0; m < n_methods; ++m) {
        std::uint8_t& slot = outcome[rep * n_methods + m];
        try {
          const double p = sample.pvalue(methods[m]);
          slot = p < design.alpha ? 1 : 0;
        } catch (const Error&) {
          slot = 2;
        }
      }
    });

    double rho_sum = 0.0;
    for (long rep = 0; rep < design.R; ++rep) rho_sum += rho_hat[rep];
    for (std::size_t m = 0; m < n_methods; ++m) {
      SimCell cell;
      cell.design = "rho=" + std::to_string(rho);
      cell.method = design.methods[m];
      for (long rep = 0; rep < design.R; ++rep) {
        const std::uint8_t v = outcome[rep * n_methods + m];
        if (v == 2)
          ++cell.failures;
        else
          cell.rejections += v;
      }
      cell.replications = design.R - cell.failures;
      if (cell.replications > 0) {
        cell.rejection_rate = static_cast<double>(cell.rejections) /
                              static_cast<double>(cell.replications);
        cell.mc_stderr =
            std::sqrt(cell.rejection_rate * (1.0 - cell.rejection_rate) /
                      static_cast<double>(cell.replications));
      }
      cell.verdict = verdict_for(cell.rejection_rate, report.band_lower,
                                 report.band_upper);
      cell.realized_rho = rho_sum / static_cast<double>(design.R);
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

// ---------------------------------------------------------------------
// Placebo regressions.

namespace {

struct PlaceboContext {
  std::vector<char> treated_mask;  // actual treated clusters
  std::vector<long> treated_counts;  // per-cluster treated observations
  int g1 = 0;                        // cluster_level draw size
};

PlaceboContext placebo_context(const ClusteredDataset& d,
                               const PlaceboDesign& design) {
  PlaceboContext ctx;
  ctx.treated_mask = treated_cluster_mask(d, design.coef_index);
  ctx.treated_counts.assign(d.n_clusters(), 0);
  for (int g = 0; g < d.n_clusters(); ++g) {
    auto [lo, hi] = d.cluster_range(g);
    for (std::ptrdiff_t i = lo; i < hi; ++i)
      ctx.treated_counts[g] += d.X(i, design.coef_index) != 0.0;
  }
  int g1_actual = 0;
  for (char c : ctx.treated_mask) g1_actual += c;
  ctx.g1 = design.treated_clusters.value_or(g1_actual);
  if (design.strategy != PlaceboStrategy::WITHIN_CLUSTER &&
      (ctx.g1 <= 0 || ctx.g1 >= d.n_clusters()))
    throw err_invalid_plan(
        "cluster-level placebo needs 0 < treated clusters < G");
  return ctx;
}

// Is the actual treatment itself a cluster-level assignment of g1 clusters?
bool actual_is_cluster_level(const ClusteredDataset& d, int j,
                             const PlaceboContext& ctx) {
  int g1_actual = 0;
  for (int g = 0; g < d.n_clusters(); ++g) {
    auto [lo, hi] = d.cluster_range(g);
    bool all = true, none = true;
    for (std::ptrdiff_t i = lo; i < hi; ++i) {
      if (d.X(i, j) != 0.0)
        none = false;
      else
        all = false;
    }
    if (!all && !none) return false;
    g1_actual += all;
  }
  return g1_actual == ctx.g1;
}

Eigen::VectorXd z_from_clusters(const ClusteredDataset& d,
                                const std::vector<int>& chosen) {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d.n_obs());
  for (int g : chosen) {
    auto [lo, hi] = d.cluster_range(g);
    z.segment(lo, hi - lo).setOnes();
  }
  return z;
}

std::vector<int> draw_cluster_subset(int G, int g1, CounterRng& rng) {
  std::vector<int> pool(G);
  for (int g = 0; g < G; ++g) pool[g] = g;
  for (int i = 0; i < g1; ++i) {
    const int pick =
        i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(G - i)));
    std::swap(pool[i], pool[pick]);
  }
  std::vector<int> out(pool.begin(), pool.begin() + g1);
  std::sort(out.begin(), out.end());
  return out;
}

Eigen::VectorXd draw_within_cluster(const ClusteredDataset& d,
                                    const PlaceboContext& ctx,
                                    CounterRng& rng) {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d.n_obs());
  for (int g = 0; g < d.n_clusters(); ++g) {
    const long t = ctx.treated_counts[g];
    if (t == 0) continue;
    auto [lo, hi] = d.cluster_range(g);
    const long ng = hi - lo;
    std::vector<long> pool(ng);
    for (long i = 0; i < ng; ++i) pool[i] = i;
    for (long i = 0; i < t; ++i) {
      const long pick =
          i + static_cast<long>(rng.next_below(static_cast<std::uint64_t>(ng - i)));
      std::swap(pool[i], pool[pick]);
      z(lo + pool[i]) = 1.0;
    }
  }
  return z;
}

}  // namespace

double placebo_space_log_size(const ClusteredDataset& d,
                              const PlaceboDesign& design) {
  const PlaceboContext ctx = placebo_context(d, design);
  double log_total;
  bool actual_in_space;
  if (design.strategy == PlaceboStrategy::WITHIN_CLUSTER) {
    log_total = 0.0;
    for (int g = 0; g < d.n_clusters(); ++g)
      log_total += log_choose(static_cast<double>(d.cluster_size(g)),
                              static_cast<double>(ctx.treated_counts[g]));
    actual_in_space = true;
  } else {
    log_total = log_choose(d.n_clusters(), ctx.g1);
    actual_in_space = actual_is_cluster_level(d, design.coef_index, ctx);
  }
  if (!actual_in_space) return log_total;
  // log(exp(log_total) - 1), stable for large arguments.
  if (log_total > 40.0) return log_total;
  return std::log(std::expm1(log_total));
}

Eigen::VectorXd generate_placebo(const ClusteredDataset& d,
                                 const PlaceboDesign& design, long replicate) {
  const PlaceboContext ctx = placebo_context(d, design);
  const Eigen::VectorXd actual = d.X.col(design.coef_index);
  for (long attempt = 0; attempt < 1000; ++attempt) {
    CounterRng rng(design.seed,
                   stream_id(kPlaceboTag, static_cast<std::uint64_t>(replicate),
                             static_cast<std::uint64_t>(attempt)));
    Eigen::VectorXd z;
    if (design.strategy == PlaceboStrategy::WITHIN_CLUSTER) {
      z = draw_within_cluster(d, ctx, rng);
    } else {
      z = z_from_clusters(d,
                          draw_cluster_subset(d.n_clusters(), ctx.g1, rng));
    }
    if (z != actual) return z;  // identical draws are excluded and redrawn
  }
  throw err_invalid_plan("placebo redraw limit reached");
}

SimReport run_placebo_study(const ClusteredDataset& d,
                            const PlaceboDesign& design) {
  std::vector<MethodId> methods;
  for (const auto& name : design.methods) methods.push_back(parse_method(name));
  const int j = design.coef_index;
  const PlaceboContext ctx = placebo_context(d, design);
  const int G = d.n_clusters();
  const WeightDist wdist = default_weights(G, design.boot_weights);

  const double log_space = placebo_space_log_size(d, design);
  const double space =
      log_space > 40.0 ? std::numeric_limits<double>::infinity()
                       : std::exp(log_space);
  if (space < 100.0) throw err_too_few_assignments(std::round(space));

  // Materialize the assignments up front (sequentially, so deduplication
  // is deterministic); evaluation then runs in parallel.
  std::vector<Eigen::VectorXd> draws;
  const Eigen::VectorXd actual = d.X.col(j);
  if (design.strategy == PlaceboStrategy::ENUMERATE_ALL) {
    const double total = std::exp(log_choose(G, ctx.g1));
    if (total > 1e6)
      throw err_invalid_plan(
          "enumeration space exceeds 1e6; use sampling instead");
    const std::uint64_t n_total = choose_u64(G, ctx.g1);
    for (std::uint64_t r = 0; r < n_total; ++r) {
      Eigen::VectorXd z =
          z_from_clusters(d, unrank_combination(G, ctx.g1, r));
      if (z != actual) draws.push_back(std::move(z));
    }
  } else {
    const bool dedup = space <= 1e6;
    if (dedup && static_cast<double>(design.R) > space)
      throw err_invalid_plan(
          "R exceeds the number of distinct assignments; use the "
          "enumeration strategy");
    std::set<std::vector<char>> seen;
    for (long rep = 0; static_cast<long>(draws.size()) < design.R; ++rep) {
      if (rep > design.R * 100 + 1000)
        throw err_invalid_plan("placebo deduplication stalled");
      Eigen::VectorXd z = generate_placebo(d, design, rep);
      if (dedup) {
        std::vector<char> key(d.n_obs());
        for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i) key[i] = z(i) != 0.0;
        if (!seen.insert(std::move(key)).second) continue;
      }
      draws.push_back(std::move(z));
    }
  }
  const long R = static_cast<long>(draws.size());

  SimReport report;
  report.alpha = design.alpha;
  report.band_lower = design.band_lo * design.alpha;
  report.band_upper = design.band_hi * design.alpha;

  const std::size_t n_methods = methods.size();
  for (PlaceboMode mode : design.modes) {
    std::vector<std::uint8_t> outcome(R * n_methods);
    parallel_for(static_cast<std::size_t>(R), design.threads,
                 [&](std::size_t rep) {
      // Swap the placebo column in (REPLACE) or append it (ADD).
      ClusteredDataset dz = d;
      int test_col;
      if (mode == PlaceboMode::REPLACE) {
        dz.X.col(j) = draws[rep];
        test_col = j;
      } else {
        dz.X.conservativeResize(Eigen::NoChange, d.n_coef() + 1);
        dz.X.col(d.n_coef()) = draws[rep];
        dz.column_names.push_back("placebo");
        test_col = static_cast<int>(d.n_coef());
      }
      std::vector<MethodId> mlist = methods;
      try {
        const DesignCache cache(dz, test_col, mlist);
        Sample sample(dz, cache, dz.y, test_col, 0.0, design.alpha,
                      design.boot_B, wdist,
                      stream_id(kBootTag ^ design.seed,
                                mode == PlaceboMode::ADD ? 1 : 2, rep));
        for (std::size_t m = 0; m < n_methods; ++m) {
          std::uint8_t& slot = outcome[rep * n_methods + m];
          try {
            const double p = sample.pvalue(mlist[m]);
            slot = p < design.alpha ? 1 : 0;
          } catch (const Error&) {
            slot = 2;
          }
        }
      } catch (const Error&) {
        for (std::size_t m = 0; m < n_methods; ++m)
          outcome[rep * n_methods + m] = 2;
      }
    });

    for (std::size_t m = 0; m < n_methods; ++m) {
      SimCell cell;
      cell.design = mode == PlaceboMode::ADD ? "add" : "replace";
      cell.method = design.methods[m];
      for (long rep = 0; rep < R; ++rep) {
        const std::uint8_t v = outcome[rep * n_methods + m];
        if (v == 2)
          ++cell.failures;
        else
          cell.rejections += v;
      }
      cell.replications = R - cell.failures;
      if (cell.replications > 0) {
        cell.rejection_rate = static_cast<double>(cell.rejections) /
                              static_cast<double>(cell.replications);
        cell.mc_stderr =
            std::sqrt(cell.rejection_rate * (1.0 - cell.rejection_rate) /
                      static_cast<double>(cell.replications));
      }
      cell.verdict = verdict_for(cell.rejection_rate, report.band_lower,
                                 report.band_upper);
      cell.realized_rho = std::numeric_limits<double>::quiet_NaN();
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

}  // namespace clusterkit
