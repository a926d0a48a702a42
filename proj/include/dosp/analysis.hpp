#pragma once

// Divergence metrics, Monte Carlo drivers and numerical checks of the
// convergence bounds (bias bound, rate recursion, envelopes).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dosp/algorithms.hpp"
#include "dosp/exchange.hpp"
#include "dosp/objectives.hpp"
#include "dosp/perturbation.hpp"
#include "dosp/rng.hpp"
#include "dosp/schedules.hpp"

namespace dosp {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dimension mismatch in squared distance");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

/// d_k = |a_k - a*|^2 for every recorded iteration of a trace.
inline std::vector<double> divergence(const RunTrace& trace, std::span<const double> a_star) {
  std::vector<double> d;
  d.reserve(trace.records.size());
  for (const auto& r : trace.records) d.push_back(squared_distance(r.nominal_action, a_star));
  return d;
}

struct DivergenceSeries {
  std::vector<Iteration> ks;
  std::vector<double> values;
  std::vector<double> std_error;
  std::size_t replications = 0;
};

// ---------------------------------------------------------------------------
// Monte Carlo driver

struct MonteCarloOptions {
  unsigned jobs = 0;           ///< 0: hardware concurrency
  RecordPolicy record;
  std::size_t block_size = 8;  ///< replications per reduction block; fixes summation order
};

/// Pointwise mean and standard error accumulated from sums.
struct MeanSeries {
  std::vector<double> mean;
  std::vector<double> std_error;
};

struct MonteCarloResult {
  std::vector<Iteration> ks;
  std::size_t replications = 0;
  std::size_t n_nodes = 0;
  std::optional<MeanSeries> divergence;  ///< d_k = |a_k - a*|^2, when a* is given
  MeanSeries utility;                    ///< f(a_k, S_k) / N
  MeanSeries grad_sq;                    ///< |g_hat_k|^2
  std::vector<std::vector<double>> mean_action; ///< per k, per node
  std::vector<double> mean_final_action;

  DivergenceSeries divergence_series() const {
    if (!divergence) throw std::logic_error("Monte Carlo result has no divergence (no a*)");
    return {ks, divergence->mean, divergence->std_error, replications};
  }
};

namespace detail {

struct MomentSums {
  std::vector<double> sum, sum_sq;
  void resize(std::size_t m) { sum.assign(m, 0.0); sum_sq.assign(m, 0.0); }
  void add(std::size_t j, double x) { sum[j] += x; sum_sq[j] += x * x; }
  void merge(const MomentSums& o) {
    for (std::size_t j = 0; j < sum.size(); ++j) { sum[j] += o.sum[j]; sum_sq[j] += o.sum_sq[j]; }
  }
  MeanSeries finish(std::size_t r) const {
    MeanSeries s{std::vector<double>(sum.size()), std::vector<double>(sum.size())};
    const auto R = static_cast<double>(r);
    for (std::size_t j = 0; j < sum.size(); ++j) {
      const double m = sum[j] / R;
      const double var = r > 1 ? std::max(0.0, (sum_sq[j] - R * m * m) / (R - 1.0)) : 0.0;
      s.mean[j] = m;
      s.std_error[j] = std::sqrt(var / R);
    }
    return s;
  }
};

struct BlockSums {
  MomentSums d, u, g;
  std::vector<double> actions;  ///< ks * n
  std::vector<double> final_action;
};

/// Runs `count` work items on `jobs` threads; items are claimed in order.
template <class Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, count));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (unsigned t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        if (failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

} // namespace detail

/// Runs R independent replications (replication r uses StreamSource(seed, r))
/// and averages per recorded iteration. Results do not depend on `jobs`.
template <Objective M>
MonteCarloResult monte_carlo(const AlgoConfig& config, const M& objective, Iteration horizon,
                             std::size_t replications, std::uint64_t seed,
                             std::optional<ActionVector> a_star = std::nullopt,
                             const MonteCarloOptions& options = {}) {
  if (replications < 1) throw std::invalid_argument("replications must be at least 1");
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  const std::size_t n = objective.n_nodes();
  if (a_star && a_star->size() != n) throw std::invalid_argument("a* dimension mismatch");
  config.validate(n);

  const Iteration first = config.schedule.first_iteration();
  const auto ks = options.record.iterations(first, first + horizon - 1);
  const std::size_t m = ks.size();
  const std::size_t block = std::max<std::size_t>(1, options.block_size);
  const std::size_t n_blocks = (replications + block - 1) / block;

  std::vector<detail::BlockSums> blocks(n_blocks);
  detail::parallel_for(n_blocks, options.jobs, [&](std::size_t b) {
    detail::BlockSums& s = blocks[b];
    s.d.resize(m);
    s.u.resize(m);
    s.g.resize(m);
    s.actions.assign(m * n, 0.0);
    s.final_action.assign(n, 0.0);
    const std::size_t r_end = std::min(replications, (b + 1) * block);
    for (std::size_t r = b * block; r < r_end; ++r) {
      std::size_t j = 0;
      const RunState final_state = run_observed(
          config, objective, horizon, StreamSource(seed, r), ks,
          [&](const IterationRecord& rec, const RunState&) {
            while (ks[j] != rec.k) ++j;
            if (a_star) s.d.add(j, squared_distance(rec.nominal_action, *a_star));
            s.u.add(j, rec.nominal_utility / static_cast<double>(n));
            double g2 = 0.0;
            for (double g : rec.gradient_estimate) g2 += g * g;
            s.g.add(j, g2);
            for (std::size_t i = 0; i < n; ++i) s.actions[j * n + i] += rec.nominal_action[i];
          });
      for (std::size_t i = 0; i < n; ++i) s.final_action[i] += final_state.a[i];
    }
  });

  detail::BlockSums total = std::move(blocks.front());
  for (std::size_t b = 1; b < n_blocks; ++b) {
    total.d.merge(blocks[b].d);
    total.u.merge(blocks[b].u);
    total.g.merge(blocks[b].g);
    for (std::size_t x = 0; x < total.actions.size(); ++x) total.actions[x] += blocks[b].actions[x];
    for (std::size_t i = 0; i < n; ++i) total.final_action[i] += blocks[b].final_action[i];
  }

  MonteCarloResult out;
  out.ks = ks;
  out.replications = replications;
  out.n_nodes = n;
  if (a_star) out.divergence = total.d.finish(replications);
  out.utility = total.u.finish(replications);
  out.grad_sq = total.g.finish(replications);
  const auto R = static_cast<double>(replications);
  out.mean_action.assign(m, std::vector<double>(n));
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < n; ++i) out.mean_action[j][i] = total.actions[j * n + i] / R;
  out.mean_final_action.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.mean_final_action[i] = total.final_action[i] / R;
  return out;
}

/// D_k averaged over replications; requires a known optimum.
template <Objective M>
DivergenceSeries monte_carlo_divergence(const AlgoConfig& config, const M& objective,
                                        Iteration horizon, std::size_t replications,
                                        std::uint64_t seed, std::span<const double> a_star,
                                        const MonteCarloOptions& options = {}) {
  if (replications < 2) throw std::invalid_argument("monte_carlo_divergence needs >= 2 replications");
  return monte_carlo(config, objective, horizon, replications, seed,
                     ActionVector(a_star.begin(), a_star.end()), options)
      .divergence_series();
}

// ---------------------------------------------------------------------------
// Bias

/// gamma n^(5/2) alpha3^3 alpha1 / (2 alpha2)
inline double bias_bound(double gamma_k, std::size_t n, double alpha1, double alpha2, double alpha3) {
  if (!(alpha2 > 0.0)) throw std::domain_error("alpha2 must be positive");
  return gamma_k * std::pow(static_cast<double>(n), 2.5) * alpha3 * alpha3 * alpha3 * alpha1 /
         (2.0 * alpha2);
}

inline double bias_bound(const PowerLawSchedule& s, Iteration k, std::size_t n, double alpha1,
                         double alpha2, double alpha3) {
  return bias_bound(gamma(s, k), n, alpha1, alpha2, alpha3);
}

/// Monte Carlo estimate of g_bar / (alpha2 gamma) - grad F(a) at a fixed action.
/// With an exchange model, node i uses its incomplete estimate and the
/// normalization includes the nonempty-subset probability q.
template <Objective M>
VectorEstimate empirical_bias(const M& objective, std::span<const double> a, double gamma_value,
                              const PerturbationModel& perturbation, std::size_t samples,
                              std::uint64_t seed,
                              std::optional<ExchangeModel> exchange = std::nullopt) {
  if (!(gamma_value > 0.0)) throw std::domain_error("empirical_bias needs gamma > 0");
  if (samples < 2) throw std::invalid_argument("empirical_bias needs >= 2 samples");
  const std::size_t n = objective.n_nodes();
  const double alpha2 = moments(perturbation).alpha2;
  const double q = exchange ? q_nonempty(*exchange, n).q_derived : 1.0;
  const double scale = 1.0 / (alpha2 * q * gamma_value);

  const StreamSource streams(seed, 0);
  std::vector<double> phi(n), perf(n), u(n), mean(n, 0.0), m2(n, 0.0), est(n);
  EnvState env;
  NodeSet subset;
  for (std::size_t t = 0; t < samples; ++t) {
    const auto it = static_cast<Iteration>(t);
    for (std::size_t i = 0; i < n; ++i) {
      SplitMix64 rng = streams.stream(it, Purpose::perturbation, i);
      phi[i] = sample_component(perturbation, rng);
      perf[i] = a[i] + gamma_value * phi[i];
    }
    {
      SplitMix64 rng = streams.stream(it, Purpose::environment);
      objective.sample_state(rng, env);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      SplitMix64 rng = streams.stream(it, Purpose::observation_noise, i);
      u[i] = observe(objective, i, perf, env, rng);
      total += u[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      double f = total;
      if (exchange) {
        SplitMix64 rng = streams.stream(it, Purpose::exchange, i);
        subset = sample_subset(*exchange, n, i, rng);
        f = incomplete_estimate(i, u, subset);
      }
      est[i] = phi[i] * f * scale;
      const double delta = est[i] - mean[i];
      mean[i] += delta / static_cast<double>(t + 1);
      m2[i] += delta * (est[i] - mean[i]);
    }
  }

  SplitMix64 grad_rng = streams.stream(0, Purpose::auxiliary);
  const VectorEstimate grad = expected_gradient(objective, a, samples, grad_rng);
  VectorEstimate out{std::vector<double>(n), std::vector<double>(n), false};
  for (std::size_t i = 0; i < n; ++i) {
    out.value[i] = mean[i] - grad.value[i];
    const double se = std::sqrt(m2[i] / static_cast<double>(samples - 1) / static_cast<double>(samples));
    out.std_error[i] = std::hypot(se, grad.std_error[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Second-moment bound M

enum class ConstantSource { configured, empirical };

inline std::string_view to_string(ConstantSource s) noexcept {
  return s == ConstantSource::configured ? "configured" : "empirical";
}

struct MEstimate {
  double value = 0.0;
  ConstantSource source = ConstantSource::empirical;
};

/// Max over recorded iterations of the Monte Carlo mean of |g_hat_k|^2, times `safety`.
inline MEstimate estimate_M(const MonteCarloResult& mc, double safety = 1.5) {
  if (mc.replications * mc.ks.size() < 1000)
    throw std::invalid_argument("estimate_M needs a sample budget of at least 1000");
  if (!(safety >= 1.0)) throw std::invalid_argument("estimate_M safety factor must be >= 1");
  double m = 0.0;
  for (double v : mc.grad_sq.mean) m = std::max(m, v);
  return {m * safety, ConstantSource::empirical};
}

/// Monte Carlo mean of |g_hat|^2 at a fixed action and perturbation step.
template <Objective M>
Estimate mean_grad_sq_at(const M& objective, std::span<const double> a, double gamma_value,
                         const PerturbationModel& perturbation, std::size_t samples,
                         std::uint64_t seed) {
  if (samples < 2) throw std::invalid_argument("mean_grad_sq_at needs >= 2 samples");
  const std::size_t n = objective.n_nodes();
  const StreamSource streams(seed, 0);
  std::vector<double> phi(n), perf(n);
  EnvState env;
  double mean = 0.0, m2 = 0.0;
  for (std::size_t t = 0; t < samples; ++t) {
    const auto it = static_cast<Iteration>(t);
    for (std::size_t i = 0; i < n; ++i) {
      SplitMix64 rng = streams.stream(it, Purpose::perturbation, i);
      phi[i] = sample_component(perturbation, rng);
      perf[i] = a[i] + gamma_value * phi[i];
    }
    SplitMix64 env_rng = streams.stream(it, Purpose::environment);
    objective.sample_state(env_rng, env);
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      SplitMix64 rng = streams.stream(it, Purpose::observation_noise, i);
      f += observe(objective, i, perf, env, rng);
    }
    double g2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) g2 += phi[i] * phi[i] * f * f;
    const double delta = g2 - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta * (g2 - mean);
  }
  return {mean, std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples)), false};
}

// ---------------------------------------------------------------------------
// Rate constants and envelopes

enum class InformationVariant { complete, incomplete };

struct RateConstants {
  double A = 0.0;
  double B = 0.0;
  double C = 0.0;
  InformationVariant variant = InformationVariant::complete;
  double q = 1.0;
  MEstimate M;
};

/// A = 2 alpha2 alpha5, B = N^(5/2) alpha1 alpha3^3, C = M; the incomplete
/// variant scales A and B by q.
inline RateConstants make_rate_constants(std::size_t n, double alpha1, double alpha2, double alpha3,
                                         double alpha5, MEstimate M,
                                         std::optional<double> q = std::nullopt) {
  if (!(alpha1 > 0.0 && alpha2 > 0.0 && alpha3 > 0.0 && alpha5 > 0.0))
    throw std::domain_error("rate constants need positive alpha1, alpha2, alpha3, alpha5");
  RateConstants c;
  c.A = 2.0 * alpha2 * alpha5;
  c.B = std::pow(static_cast<double>(n), 2.5) * alpha1 * alpha3 * alpha3 * alpha3;
  c.C = M.value;
  c.M = M;
  if (q) {
    if (!(*q > 0.0 && *q <= 1.0)) throw std::domain_error("q must lie in (0, 1]");
    c.variant = InformationVariant::incomplete;
    c.q = *q;
    c.A *= *q;
    c.B *= *q;
  }
  return c;
}

/// Fixed-point lower expression of the decreasing envelope:
/// (B gamma / (2A) + sqrt((B/(2A))^2 gamma^2 + (C/A) beta/gamma))^2
inline double lemma5_floor(const RateConstants& c, const PowerLawSchedule& s, Iteration k) {
  const double b = beta(s, k);
  const double g = gamma(s, k);
  const double h = c.B / (2.0 * c.A);
  const double root = h * g + std::sqrt(h * h * g * g + (c.C / c.A) * b / g);
  return root * root;
}

struct Theorem4Envelopes {
  Iteration K0 = 0;
  bool theta_applicable = false;
  bool rho_applicable = false;
  double theta = std::numeric_limits<double>::quiet_NaN();
  double rho = std::numeric_limits<double>::quiet_NaN();

  /// theta^2 gamma_k^2, NaN when inapplicable or k < K0.
  double theta_envelope(const PowerLawSchedule& s, Iteration k) const {
    if (!theta_applicable || k < K0) return std::numeric_limits<double>::quiet_NaN();
    const double g = gamma(s, k);
    return theta * theta * g * g;
  }
  /// rho^2 beta_k / gamma_k, NaN when inapplicable or k < K0.
  double rho_envelope(const PowerLawSchedule& s, Iteration k) const {
    if (!rho_applicable || k < K0) return std::numeric_limits<double>::quiet_NaN();
    return rho * rho * beta(s, k) / gamma(s, k);
  }
};

inline Theorem4Envelopes theorem4_envelopes(const RateDiagnostics& diag, const RateConstants& c,
                                            double D_K0, const PowerLawSchedule& s) {
  if (D_K0 < 0.0) throw std::domain_error("D_K0 must be nonnegative");
  Theorem4Envelopes e;
  e.K0 = diag.K0;
  const double bK = beta(s, diag.K0);
  const double gK = gamma(s, diag.K0);

  if (std::isfinite(diag.chi_sup) && diag.beta_over_gamma3_finite() && c.A > diag.chi_sup) {
    const double gap = c.A - diag.chi_sup;
    e.theta_applicable = true;
    e.theta = std::max(std::sqrt(D_K0) / gK,
                       (c.B + std::sqrt(c.B * c.B + 4.0 * c.C * diag.beta_over_gamma3_sup * gap)) /
                           (2.0 * gap));
  }
  if (std::isfinite(diag.varpi_sup) && diag.sqrt_gamma3_over_beta_finite() && c.A > diag.varpi_sup) {
    const double gap = c.A - diag.varpi_sup;
    const double be = c.B * diag.sqrt_gamma3_over_beta_sup;
    e.rho_applicable = true;
    e.rho = std::max(std::sqrt(D_K0 * gK / bK), (be + std::sqrt(be * be + 4.0 * c.C * gap)) / (2.0 * gap));
  }
  return e;
}

/// Omega (k+1)^-min{2 nu2, nu1 - nu2}
inline double theorem5_envelope(const PowerLawSchedule& s, double Omega, Iteration k) {
  return Omega * std::pow(static_cast<double>(k + 1), -rate_exponent(s));
}

/// One step of the rate recursion
/// D_{k+1} <= (1 - A beta gamma) D_k + B beta gamma^2 sqrt(D_k) + C beta^2,
/// with the standard error of (lhs - rhs) propagated from those of D_k, D_{k+1}.
struct RecursionCheck {
  Iteration k = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double combined_se = 0.0;
  bool holds(double n_se = 4.0) const { return lhs - rhs <= n_se * combined_se; }
};

inline RecursionCheck lemma4_recursion(const RateConstants& c, const PowerLawSchedule& s, Iteration k,
                                       double D_k, double se_k, double D_next, double se_next) {
  const double b = beta(s, k);
  const double g = gamma(s, k);
  const double contraction = 1.0 - c.A * b * g;
  const double root = std::sqrt(std::max(D_k, 0.0));
  RecursionCheck r;
  r.k = k;
  r.lhs = D_next;
  r.rhs = contraction * D_k + c.B * b * g * g * root + c.C * b * b;
  const double d_root = root > 0.0 ? c.B * b * g * g * se_k / (2.0 * root) : 0.0;
  r.combined_se = std::sqrt(se_next * se_next + contraction * contraction * se_k * se_k + d_root * d_root);
  return r;
}

// ---------------------------------------------------------------------------

struct Lemma7Result {
  double g = 0.0;
  bool holds = false;
};

/// g(x) = x^-a (1 - (1+x)^-b) and whether g < b, for a, b, x in (0, 1].
inline Lemma7Result lemma7_check(double a, double b, double x) {
  auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
  if (!in_unit(a) || !in_unit(b) || !in_unit(x))
    throw std::domain_error("lemma7_check arguments must lie in (0, 1]");
  // 1 - (1+x)^-b = -expm1(-b log1p(x)) keeps precision for small x
  const double g = std::pow(x, -a) * -std::expm1(-b * std::log1p(x));
  return {g, g < b};
}

/// Mean of values[j] * weight(k_j) over lo <= k_j <= hi.
template <class Weight>
double window_average(std::span<const Iteration> ks, std::span<const double> values, Iteration lo,
                      Iteration hi, Weight&& weight) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < ks.size(); ++j) {
    if (ks[j] < lo || ks[j] > hi) continue;
    sum += values[j] * weight(ks[j]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("window_average: no recorded iterations in window");
  return sum / static_cast<double>(count);
}

inline double window_average(std::span<const Iteration> ks, std::span<const double> values,
                             Iteration lo, Iteration hi) {
  return window_average(ks, values, lo, hi, [](Iteration) { return 1.0; });
}

} // namespace dosp
