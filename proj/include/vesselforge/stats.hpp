#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace vesselforge {

struct GroupSamples {
  std::string name;
  std::vector<double> values;
};

struct AnovaResult {
  double f = 0.0;
  double p = 1.0;
  double df_between = 0.0;
  double df_within = 0.0;
  double ss_between = 0.0;
  double ss_within = 0.0;
};

struct PairwiseResult {
  std::string group_a;
  std::string group_b;
  double t = 0.0;
  double p_raw = 1.0;
  double p_adjusted = 1.0;
  bool significant = false;
};

namespace detail {

// Continued-fraction kernel for the regularized incomplete beta (Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr int max_iter = 500;
  constexpr double eps = 1e-12;
  constexpr double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) return h;
  }
  throw std::runtime_error("regularized_incomplete_beta: continued fraction did not converge");
}

}  // namespace detail

inline double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("regularized_incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("regularized_incomplete_beta: x must lie in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

// Survival function of the F distribution: P(F_{d1,d2} > f).
inline double f_survival(double f, double df1, double df2) {
  if (f <= 0.0) return 1.0;
  return regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f));
}

// Two-sided p for Student's t with nu degrees of freedom.
inline double t_two_sided_p(double t, double nu) {
  if (t == 0.0) return 1.0;
  return regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
}

namespace detail {

inline void check_groups(const std::vector<GroupSamples>& groups) {
  if (groups.size() < 2) throw std::invalid_argument("stats: need at least 2 groups");
  for (const auto& g : groups) {
    if (g.values.size() < 2)
      throw std::invalid_argument("stats: group '" + g.name + "' needs at least 2 samples");
    for (const double v : g.values)
      if (!std::isfinite(v)) throw std::invalid_argument("stats: group '" + g.name + "' contains a non-finite value");
  }
}

inline double group_mean(const GroupSamples& g) {
  double s = 0.0;
  for (const double v : g.values) s += v;
  return s / static_cast<double>(g.values.size());
}

}  // namespace detail

inline AnovaResult one_way_anova(const std::vector<GroupSamples>& groups) {
  detail::check_groups(groups);
  size_t n_total = 0;
  double grand_sum = 0.0;
  for (const auto& g : groups) {
    n_total += g.values.size();
    for (const double v : g.values) grand_sum += v;
  }
  const double grand_mean = grand_sum / static_cast<double>(n_total);

  AnovaResult r;
  r.df_between = static_cast<double>(groups.size() - 1);
  r.df_within = static_cast<double>(n_total - groups.size());
  for (const auto& g : groups) {
    const double m = detail::group_mean(g);
    const double dm = m - grand_mean;
    r.ss_between += static_cast<double>(g.values.size()) * dm * dm;
    for (const double v : g.values) r.ss_within += (v - m) * (v - m);
  }

  if (r.ss_within == 0.0) {
    if (r.ss_between == 0.0) return r;  // every value identical: F=0, p=1
    throw std::domain_error("one_way_anova: zero within-group variance with nonzero between-group variance");
  }
  const double ms_between = r.ss_between / r.df_between;
  const double ms_within = r.ss_within / r.df_within;
  r.f = ms_between / ms_within;
  r.p = f_survival(r.f, r.df_between, r.df_within);
  return r;
}

// Pooled-variance two-sample t test, two-sided.
inline PairwiseResult pooled_t_test(const GroupSamples& a, const GroupSamples& b) {
  detail::check_groups({a, b});
  const double na = static_cast<double>(a.values.size());
  const double nb = static_cast<double>(b.values.size());
  const double ma = detail::group_mean(a);
  const double mb = detail::group_mean(b);
  double ss = 0.0;
  for (const double v : a.values) ss += (v - ma) * (v - ma);
  for (const double v : b.values) ss += (v - mb) * (v - mb);
  const double nu = na + nb - 2.0;
  const double sp2 = ss / nu;

  PairwiseResult r;
  r.group_a = a.name;
  r.group_b = b.name;
  if (sp2 == 0.0) {
    if (ma == mb) return r;  // t=0, p=1
    throw std::domain_error("pooled_t_test: zero pooled variance with unequal means");
  }
  r.t = (ma - mb) / std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
  r.p_raw = t_two_sided_p(r.t, nu);
  r.p_adjusted = r.p_raw;
  r.significant = r.p_adjusted < 0.05;
  return r;
}

inline std::vector<PairwiseResult> bonferroni_posthoc(const std::vector<GroupSamples>& groups) {
  detail::check_groups(groups);
  const size_t g = groups.size();
  const double m = static_cast<double>(g * (g - 1) / 2);
  std::vector<PairwiseResult> out;
  out.reserve(static_cast<size_t>(m));
  for (size_t i = 0; i < g; ++i) {
    for (size_t j = i + 1; j < g; ++j) {
      PairwiseResult r = pooled_t_test(groups[i], groups[j]);
      r.p_adjusted = std::min(1.0, r.p_raw * m);
      r.significant = r.p_adjusted < 0.05;
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace vesselforge
