#pragma once

// Power-law step sizes beta_k = beta0 (k + o)^-nu1, gamma_k = gamma0 (k + o)^-nu2
// and the rate diagnostics that depend only on the schedule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace dosp {

using Iteration = std::int64_t;

struct PowerLawSchedule {
  double beta0 = 1.0;
  double nu1 = 0.75;
  double gamma0 = 1.0;
  double nu2 = 0.25;
  int index_offset = 1; ///< 1: evaluate at k+1; 0: evaluate at k, iterate from k = 1

  /// First admissible iteration index.
  constexpr Iteration first_iteration() const noexcept { return index_offset == 0 ? 1 : 0; }
};

namespace detail {
inline double schedule_base(const PowerLawSchedule& s, Iteration k) {
  if (s.index_offset != 0 && s.index_offset != 1)
    throw std::domain_error("schedule index_offset must be 0 or 1");
  if (k < 0) throw std::domain_error("schedule evaluated at negative iteration");
  if (s.index_offset == 0 && k == 0)
    throw std::domain_error("schedule with index_offset 0 evaluated at k = 0");
  return static_cast<double>(k + s.index_offset);
}
} // namespace detail

inline double beta(const PowerLawSchedule& s, Iteration k) {
  return s.beta0 * std::pow(detail::schedule_base(s, k), -s.nu1);
}

inline double gamma(const PowerLawSchedule& s, Iteration k) {
  return s.gamma0 * std::pow(detail::schedule_base(s, k), -s.nu2);
}

/// Step-size conditions, decided from the exponents.
struct A4Report {
  bool vanishing = false;         ///< nu1 > 0 and nu2 > 0
  bool square_summable = false;   ///< sum beta_k^2 < inf  <=>  nu1 > 1/2
  bool product_divergent = false; ///< sum beta_k gamma_k = inf  <=>  nu1 + nu2 <= 1
  bool positive_scales = false;   ///< beta0 > 0 and gamma0 > 0

  bool valid() const noexcept {
    return vanishing && square_summable && product_divergent && positive_scales;
  }

  /// Human-readable reason for the first failing check, empty when valid.
  std::string failure() const {
    if (!positive_scales) return "beta0 and gamma0 must be positive";
    if (!vanishing) return "check (i) failed: step sizes must vanish (nu1 > 0, nu2 > 0)";
    if (!square_summable) return "check (ii) failed: sum of beta_k^2 diverges (need nu1 > 0.5)";
    if (!product_divergent)
      return "check (iii) failed: sum of beta_k*gamma_k converges (need nu1 + nu2 <= 1)";
    return {};
  }
};

inline A4Report validate_a4(const PowerLawSchedule& s) noexcept {
  A4Report r;
  r.positive_scales = s.beta0 > 0.0 && s.gamma0 > 0.0;
  r.vanishing = s.nu1 > 0.0 && s.nu2 > 0.0;
  r.square_summable = s.nu1 > 0.5;
  r.product_divergent = s.nu1 + s.nu2 <= 1.0;
  return r;
}

/// chi_k = (1 - (gamma_{k+1}/gamma_k)^2) / (beta_k gamma_k)
inline double chi(const PowerLawSchedule& s, Iteration k) {
  const double g0 = gamma(s, k);
  const double ratio = gamma(s, k + 1) / g0;
  return (1.0 - ratio * ratio) / (beta(s, k) * g0);
}

/// varpi_k = (1 - (beta_{k+1}/gamma_{k+1}) / (beta_k/gamma_k)) / (beta_k gamma_k)
inline double varpi(const PowerLawSchedule& s, Iteration k) {
  const double b0 = beta(s, k);
  const double g0 = gamma(s, k);
  const double r = (beta(s, k + 1) / gamma(s, k + 1)) / (b0 / g0);
  return (1.0 - r) / (b0 * g0);
}

struct RateDiagnostics {
  double chi_sup = 0.0;                   ///< epsilon_1
  double beta_over_gamma3_sup = 0.0;      ///< epsilon_2, +inf when unbounded
  double varpi_sup = 0.0;                 ///< epsilon_3
  double sqrt_gamma3_over_beta_sup = 0.0; ///< epsilon_4, +inf when unbounded
  Iteration K0 = 0;
  double exponent = 0.0; ///< min{2 nu2, nu1 - nu2}

  bool beta_over_gamma3_finite() const noexcept { return std::isfinite(beta_over_gamma3_sup); }
  bool sqrt_gamma3_over_beta_finite() const noexcept {
    return std::isfinite(sqrt_gamma3_over_beta_sup);
  }
};

inline double rate_exponent(const PowerLawSchedule& s) noexcept {
  return std::min(2.0 * s.nu2, s.nu1 - s.nu2);
}

/// Smallest k >= K_c with beta_k gamma_k < 1/A.
inline Iteration first_contracting_iteration(const PowerLawSchedule& s, double A, Iteration K_c) {
  if (!(A > 0.0)) throw std::domain_error("rate constant A must be positive");
  const Iteration start = std::max(K_c, s.first_iteration());
  const double decay = s.nu1 + s.nu2;
  const double target = 1.0 / A;
  auto contracting = [&](Iteration k) { return beta(s, k) * gamma(s, k) < target; };
  if (contracting(start)) return start;
  if (!(decay > 0.0))
    throw std::domain_error("beta_k*gamma_k never drops below 1/A for a non-decaying schedule");
  // beta_k gamma_k = beta0 gamma0 (k+o)^-decay is decreasing: jump close, then scan.
  const double guess = std::pow(A * s.beta0 * s.gamma0, 1.0 / decay) - s.index_offset;
  Iteration k = std::max(start, static_cast<Iteration>(std::floor(guess)) - 2);
  while (k > start && contracting(k - 1)) --k;
  while (!contracting(k)) ++k;
  return k;
}

/// Suprema over k >= K0. Finite suprema are scanned up to `horizon`; the
/// tail beyond it is covered by the closed-form limit of each power law.
inline RateDiagnostics rate_diagnostics(const PowerLawSchedule& s, double A, Iteration K_c,
                                        Iteration horizon = 1'000'000) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  RateDiagnostics d;
  d.K0 = first_contracting_iteration(s, A, K_c);
  d.exponent = rate_exponent(s);

  const Iteration last = std::max(horizon, d.K0);
  const double scale = s.beta0 * s.gamma0;
  const double decay = s.nu1 + s.nu2;
  const bool eps2_finite = s.nu1 >= 3.0 * s.nu2;
  const bool eps4_finite = s.nu1 <= 3.0 * s.nu2;

  double chi_max = -inf, varpi_max = -inf, e2 = -inf, e4 = -inf;
  for (Iteration k = d.K0; k <= last; ++k) {
    chi_max = std::max(chi_max, chi(s, k));
    varpi_max = std::max(varpi_max, varpi(s, k));
    const double b = beta(s, k);
    const double g = gamma(s, k);
    if (eps2_finite) e2 = std::max(e2, b / (g * g * g));
    if (eps4_finite) e4 = std::max(e4, std::sqrt(g * g * g / b));
  }

  // k -> inf: chi ~ 2 nu2 (k+o)^(decay-1) / scale, varpi ~ (nu1-nu2)(k+o)^(decay-1) / scale
  auto tail = [&](double coefficient) {
    if (decay < 1.0) return 0.0;
    if (decay == 1.0) return coefficient / scale;
    return coefficient > 0.0 ? inf : 0.0;
  };
  d.chi_sup = std::max(chi_max, tail(2.0 * s.nu2));
  d.varpi_sup = std::max(varpi_max, tail(s.nu1 - s.nu2));
  d.beta_over_gamma3_sup = eps2_finite ? e2 : inf;
  d.sqrt_gamma3_over_beta_sup = eps4_finite ? e4 : inf;
  return d;
}

struct Theorem5Condition {
  bool holds = false;
  double threshold = 0.0; ///< max{2 nu2, nu1 - nu2} / A
};

inline Theorem5Condition theorem5_condition(const PowerLawSchedule& s, double A) {
  if (!(A > 0.0)) throw std::domain_error("rate constant A must be positive");
  Theorem5Condition c;
  c.threshold = std::max(2.0 * s.nu2, s.nu1 - s.nu2) / A;
  c.holds = s.beta0 * s.gamma0 >= c.threshold;
  return c;
}

} // namespace dosp
