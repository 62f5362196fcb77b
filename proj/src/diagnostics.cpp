#include "clusterkit/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "clusterkit/errors.hpp"
#include "clusterkit/svtest.hpp"

namespace clusterkit {

namespace {

double quantile_type7(std::vector<double> x, double p) {
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - std::floor(h)) * (x[hi] - x[lo]);
}

}  // namespace

LeverageProfile partial_leverage_profile(const ClusteredDataset& d,
                                         const FitResult& f, int j) {
  (void)f;
  const ClusterBlocks b = build_blocks(d);
  const Eigen::VectorXd z = partial_out(d, b, j);
  const double total = z.squaredNorm();
  const int G = d.n_clusters();
  LeverageProfile lp;
  lp.coef_index = j;
  lp.leverage.resize(G);
  for (int g = 0; g < G; ++g) {
    auto [lo, hi] = d.cluster_range(g);
    lp.leverage(g) = z.segment(lo, hi - lo).squaredNorm() / total;
  }
  const double mean = 1.0 / G;
  double ss = 0.0;
  for (int g = 0; g < G; ++g)
    ss += (lp.leverage(g) - mean) * (lp.leverage(g) - mean);
  lp.scaled_variance = static_cast<double>(G) * G / (G - 1.0) * ss;
  lp.effective_clusters = G / (1.0 + lp.scaled_variance);
  return lp;
}

ClusterVarianceProfile cluster_variance_profile(const ClusteredDataset& d,
                                                const FitResult& f) {
  const int G = d.n_clusters();
  ClusterVarianceProfile cv;
  cv.sigma2.assign(G, std::numeric_limits<double>::quiet_NaN());
  cv.mean_residual.assign(G, 0.0);
  cv.available.assign(G, 0);
  double sum = 0.0, sumsq = 0.0;
  int avail = 0;
  for (int g = 0; g < G; ++g) {
    auto [lo, hi] = d.cluster_range(g);
    const auto ug = f.residuals.segment(lo, hi - lo);
    cv.mean_residual[g] = ug.mean();
    if (hi - lo < 2) continue;  // singleton: no (N_g - 1) divisor
    const double s2 =
        (ug.array() - cv.mean_residual[g]).square().sum() /
        static_cast<double>(hi - lo - 1);
    cv.sigma2[g] = s2;
    cv.available[g] = 1;
    sum += s2;
    sumsq += s2 * s2;
    ++avail;
  }
  if (avail >= 2 && sum > 0.0) {
    const double mean = sum / avail;
    const double var = (sumsq - avail * mean * mean) / (avail - 1.0);
    cv.coef_variation = var > 0.0 ? std::sqrt(var) / mean : 0.0;
  }
  return cv;
}

TreatmentVarianceResult treatment_variance_test(const ClusteredDataset& d,
                                                const FitResult& f,
                                                int treatment_col) {
  long treated = 0;
  for (std::ptrdiff_t i = 0; i < d.n_obs(); ++i) {
    const double t = d.X(i, treatment_col);
    if (t != 0.0 && t != 1.0)
      throw DataError("NonBinaryTreatment",
                      "treatment column must be 0/1");
    treated += t == 1.0;
  }
  if (treated == 0) throw err_all_control();
  if (treated == d.n_obs()) throw err_all_treated();

  Eigen::MatrixXd x2(d.n_obs(), 2);
  x2.col(0).setOnes();
  x2.col(1) = d.X.col(treatment_col);
  ClusteredDataset aux = make_dataset(f.residuals.cwiseProduct(f.residuals),
                                      x2, d.cluster_id, {}, {"const", "T"});
  const ClusterBlocks b = build_blocks(aux);
  const FitResult af = ols_fit(aux, b);
  TreatmentVarianceResult r;
  r.eta1 = af.beta_hat(0);
  r.eta2 = af.beta_hat(1);
  r.ratio = r.eta1 != 0.0 ? r.eta2 / r.eta1
                          : std::numeric_limits<double>::quiet_NaN();
  try {
    r.test = t_test(cv1(b, af), af, 1, 0.0, 0.05);
  } catch (const MethodError&) {
    // Constant squared residuals: eta2 = 0 with an exactly zero variance.
    r.test.coef = r.eta2;
    r.test.p_value = 1.0;
    r.test.method = "CV1";
  }
  return r;
}

OmitOneDispersion omit_one_dispersion(const JackknifeSet& jk,
                                      const FitResult& f, int j) {
  OmitOneDispersion od;
  od.computable = jk.computable;
  od.delta.assign(jk.beta_g.size(),
                  std::numeric_limits<double>::quiet_NaN());
  std::vector<double> values;
  for (std::size_t g = 0; g < jk.beta_g.size(); ++g) {
    if (!jk.computable[g]) continue;
    od.delta[g] = jk.beta_g[g](j) - f.beta_hat(j);
    values.push_back(od.delta[g]);
  }
  if (values.size() >= 2) {
    od.iqr = quantile_type7(values, 0.75) - quantile_type7(values, 0.25);
    double best = -1.0;
    for (std::size_t g = 0; g < od.delta.size(); ++g) {
      if (!od.computable[g]) continue;
      const double a = std::fabs(od.delta[g]);
      if (a > best) {
        best = a;
        od.max_cluster = static_cast<int>(g);
      }
      if (a > 3.0 * od.iqr && od.iqr > 0.0)
        od.flagged.push_back(static_cast<int>(g));
    }
  }
  return od;
}

RedFlagReport red_flag_report(const ClusteredDataset& d, const FitResult& f,
                              int j, const RedFlagThresholds& th) {
  RedFlagReport rep;
  rep.thresholds = th;
  rep.G = d.n_clusters();
  rep.N = static_cast<long>(d.n_obs());
  std::vector<double> sizes;
  for (int g = 0; g < rep.G; ++g)
    sizes.push_back(static_cast<double>(d.cluster_size(g)));
  rep.min_ng = static_cast<long>(*std::min_element(sizes.begin(), sizes.end()));
  rep.max_ng = static_cast<long>(*std::max_element(sizes.begin(), sizes.end()));
  rep.median_ng = quantile_type7(sizes, 0.5);
  rep.largest_share = static_cast<double>(rep.max_ng) / rep.N;

  if (d.treatment_col) {
    rep.G1 = 0;
    for (int g = 0; g < rep.G; ++g) {
      auto [lo, hi] = d.cluster_range(g);
      bool any = false;
      for (std::ptrdiff_t i = lo; i < hi; ++i)
        any = any || d.X(i, *d.treatment_col) != 0.0;
      rep.G1 += any;
    }
    rep.G0 = rep.G - rep.G1;
  }

  rep.leverage = partial_leverage_profile(d, f, j);
  rep.variance_profile = cluster_variance_profile(d, f);

  if (d.treatment_col) {
    try {
      rep.treatment = treatment_variance_test(d, f, *d.treatment_col);
    } catch (const Error& e) {
      rep.treatment_error = e.code();
    }
  }
  try {
    const ClusterBlocks b = build_blocks(d);
    rep.omit_one = omit_one_dispersion(jackknife_estimates(b, f), f, j);
  } catch (const Error& e) {
    rep.omit_one_error = e.code();
  }

  if (rep.G < th.min_clusters) rep.flags.push_back("FewClusters");
  if (rep.G1 >= 0 && rep.G1 < th.min_treated)
    rep.flags.push_back("FewTreatedClusters");
  if (rep.G0 >= 0 && rep.G0 < th.min_treated)
    rep.flags.push_back("FewControlClusters");
  if (rep.largest_share > th.max_cluster_share)
    rep.flags.push_back("DominantCluster");
  if (rep.leverage.effective_clusters < th.min_effective_ratio * rep.G)
    rep.flags.push_back("LowEffectiveClusters");
  if (rep.variance_profile.coef_variation > th.max_variance_cov)
    rep.flags.push_back("HighVarianceSpread");
  if (rep.treatment && rep.treatment->test.p_value < th.eta2_pvalue &&
      rep.treatment->ratio > th.eta2_ratio)
    rep.flags.push_back("TreatmentHeteroskedasticity");
  if (rep.omit_one && !rep.omit_one->flagged.empty())
    rep.flags.push_back("ExtremeOmitOneDelta");
  return rep;
}

}  // namespace clusterkit
