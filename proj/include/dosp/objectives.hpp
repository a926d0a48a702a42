#pragma once

// Objective models: environment sampling, local utilities, noisy observations,
// exact per-sample gradients and (where known) the optimum.
//
// Gains are indexed s_ij = gain from transmitter i to receiver j. Receiver i is
// interfered by transmitter j through s_ji.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dosp/rng.hpp"

namespace dosp {

using ActionVector = std::vector<double>;

struct EnvState {
  std::size_t n = 0;
  std::vector<double> gains; ///< power: n*n row-major s_ij; toy: (s1, s2)

  double gain(std::size_t i, std::size_t j) const noexcept { return gains[i * n + j]; }
};

/// Per-node interval [lower_i, upper_i].
struct Box {
  std::vector<double> lower;
  std::vector<double> upper;

  static Box uniform(std::size_t n, double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("box lower bound must be below upper bound");
    return Box{std::vector<double>(n, lo), std::vector<double>(n, hi)};
  }
  std::size_t size() const noexcept { return lower.size(); }
  bool contains(std::span<const double> a) const noexcept {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(a[i] >= lower[i] && a[i] <= upper[i])) return false;
    return true;
  }
  double min_half_width() const noexcept {
    double w = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lower.size(); ++i) w = std::min(w, 0.5 * (upper[i] - lower[i]));
    return w;
  }
};

/// Scalar estimate; `exact` marks closed-form values (std_error 0).
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  bool exact = false;
};

struct VectorEstimate {
  std::vector<double> value;
  std::vector<double> std_error;
  bool exact = false;
};

// ---------------------------------------------------------------------------
// Quadratic toy: f(a, S) = -s1 a1^2 - s2 a2^2 + a1 a2 + a1 + a2, s ~ U[0.5, 1.5]^2.

class QuadraticToy {
public:
  explicit QuadraticToy(double noise_variance = 0.0) : noise_variance_(noise_variance) {
    if (noise_variance < 0.0) throw std::invalid_argument("noise_variance must be >= 0");
  }

  static constexpr const char* name() noexcept { return "toy"; }
  std::size_t n_nodes() const noexcept { return 2; }
  double noise_variance() const noexcept { return noise_variance_; }

  void sample_state(SplitMix64& rng, EnvState& s) const {
    s.n = 2;
    s.gains.resize(2);
    s.gains[0] = 0.5 + rng.uniform01();
    s.gains[1] = 0.5 + rng.uniform01();
  }

  // u1 = -s1 a1^2 + a1, u2 = -s2 a2^2 + a1 a2 + a2
  double local_utility(std::size_t i, std::span<const double> a, const EnvState& s) const {
    if (i == 0) return -s.gains[0] * a[0] * a[0] + a[0];
    if (i == 1) return -s.gains[1] * a[1] * a[1] + a[0] * a[1] + a[1];
    throw std::out_of_range("toy objective has two nodes");
  }

  double global_utility(std::span<const double> a, const EnvState& s) const {
    return -s.gains[0] * a[0] * a[0] - s.gains[1] * a[1] * a[1] + a[0] * a[1] + a[0] + a[1];
  }

  void exact_sample_gradient(std::span<const double> a, const EnvState& s,
                             std::span<double> out) const {
    out[0] = -2.0 * s.gains[0] * a[0] + a[1] + 1.0;
    out[1] = -2.0 * s.gains[1] * a[1] + a[0] + 1.0;
  }

  double closed_form_objective(std::span<const double> a) const {
    return -a[0] * a[0] - a[1] * a[1] + a[0] * a[1] + a[0] + a[1];
  }

  std::vector<double> closed_form_gradient(std::span<const double> a) const {
    return {-2.0 * a[0] + a[1] + 1.0, -2.0 * a[1] + a[0] + 1.0};
  }

  Box initial_box() const { return Box::uniform(2, 0.0, 3.0); }
  Box default_bounds() const { return Box::uniform(2, 0.0, 3.0); }

  void sample_initial_action(SplitMix64& rng, std::span<double> a) const {
    for (auto& v : a) v = 3.0 * rng.uniform01();
  }

  std::optional<ActionVector> optimum() const { return ActionVector{1.0, 1.0}; }
  std::optional<double> strong_concavity() const { return 1.0; }
  std::optional<double> hessian_bound() const { return 2.0; }

private:
  double noise_variance_;
};

// ---------------------------------------------------------------------------
// Wireless power-control models.

struct PowerParams {
  std::size_t n_nodes = 4;
  double omega = 20.0;
  double kappa = 1.0;
  double sigma2 = 0.2;
  double noise_variance = 0.0;
  double a_min = 1e-6;
  double a_max = 20.0;
  double direct_variance = 1.0; ///< Var(h_ii)
  double cross_variance = 0.1;  ///< Var(h_ij), i != j

  void validate() const {
    if (n_nodes < 1) throw std::invalid_argument("objective.n_nodes must be >= 1");
    if (!(omega > 0.0)) throw std::invalid_argument("omega must be positive");
    if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be positive");
    if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
    if (noise_variance < 0.0) throw std::invalid_argument("noise_variance must be >= 0");
    if (!(a_min > 0.0 && a_min < a_max)) throw std::invalid_argument("need 0 < a_min < a_max");
  }
};

namespace detail {
inline void sample_rayleigh_gains(const PowerParams& p, SplitMix64& rng, EnvState& s) {
  const std::size_t n = p.n_nodes;
  s.n = n;
  s.gains.resize(n * n);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double sd_direct = std::sqrt(p.direct_variance);
  const double sd_cross = std::sqrt(p.cross_variance);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double h = unit(rng) * (i == j ? sd_direct : sd_cross);
      s.gains[i * n + j] = h * h;
    }
  }
}
} // namespace detail

/// Proportional-fair utility u_i = omega log(1 + log(1 + SINR_i)) - kappa a_i, a = power.
class ProportionalFairPower {
public:
  explicit ProportionalFairPower(PowerParams p) : p_(std::move(p)) { p_.validate(); }

  static constexpr const char* name() noexcept { return "power_pf"; }
  const PowerParams& params() const noexcept { return p_; }
  std::size_t n_nodes() const noexcept { return p_.n_nodes; }
  double noise_variance() const noexcept { return p_.noise_variance; }

  void sample_state(SplitMix64& rng, EnvState& s) const { detail::sample_rayleigh_gains(p_, rng, s); }

  /// sigma^2 + sum_{j != i} a_j s_ji
  double interference(std::size_t i, std::span<const double> a, const EnvState& s) const {
    double total = p_.sigma2;
    for (std::size_t j = 0; j < p_.n_nodes; ++j)
      if (j != i) total += a[j] * s.gain(j, i);
    return total;
  }

  double sinr(std::size_t i, std::span<const double> a, const EnvState& s) const {
    return a[i] * s.gain(i, i) / interference(i, a, s);
  }

  double local_utility(std::size_t i, std::span<const double> a, const EnvState& s) const {
    const double x = sinr(i, a, s);
    const double rate = std::log1p(x);
    if (!(x > -1.0) || !(rate > -1.0))
      throw std::domain_error("proportional-fair utility undefined for SINR " + std::to_string(x));
    return p_.omega * std::log1p(rate) - p_.kappa * a[i];
  }

  double global_utility(std::span<const double> a, const EnvState& s) const {
    double total = 0.0;
    for (std::size_t i = 0; i < p_.n_nodes; ++i) total += local_utility(i, a, s);
    return total;
  }

  /// d f / d a_i = omega SINR_i / ((1 + r_i) a_i) - kappa
  ///             - sum_n omega SINR_n^2 / ((1 + r_n)(1 + SINR_n)) * s_in / (a_n s_nn)
  void exact_sample_gradient(std::span<const double> a, const EnvState& s,
                             std::span<double> out) const {
    const std::size_t n = p_.n_nodes;
    thread_local std::vector<double> sinr_v, rate_v, weight;
    sinr_v.resize(n);
    rate_v.resize(n);
    weight.resize(n);
    for (std::size_t m = 0; m < n; ++m) {
      if (!(a[m] > 0.0) || !(s.gain(m, m) > 0.0))
        throw std::domain_error("proportional-fair gradient needs a_n > 0 and s_nn > 0");
      sinr_v[m] = sinr(m, a, s);
      rate_v[m] = std::log1p(sinr_v[m]);
      weight[m] = p_.omega * sinr_v[m] * sinr_v[m] /
                  ((1.0 + rate_v[m]) * (1.0 + sinr_v[m]) * a[m] * s.gain(m, m));
    }
    for (std::size_t i = 0; i < n; ++i) {
      double g = p_.omega * sinr_v[i] / ((1.0 + rate_v[i]) * a[i]) - p_.kappa;
      for (std::size_t m = 0; m < n; ++m) g -= weight[m] * s.gain(i, m);
      out[i] = g;
    }
  }

  Box initial_box() const { return Box::uniform(p_.n_nodes, 0.0, p_.a_max); }
  Box default_bounds() const { return Box::uniform(p_.n_nodes, p_.a_min, p_.a_max); }

  /// Uniform on (0, a_max].
  void sample_initial_action(SplitMix64& rng, std::span<double> a) const {
    for (auto& v : a) v = p_.a_max * (1.0 - rng.uniform01());
  }

  std::optional<ActionVector> optimum() const { return std::nullopt; }
  std::optional<double> strong_concavity() const { return std::nullopt; }
  std::optional<double> hessian_bound() const { return std::nullopt; }

private:
  PowerParams p_;
};

/// Sum-rate with high-SINR approximation and log-power actions (power = e^{a_i}):
/// u_i = omega log(s_ii e^{a_i} / (sigma^2 + sum_{j != i} s_ji e^{a_j})) - kappa e^{a_i}.
class SumRatePower {
public:
  explicit SumRatePower(PowerParams p) : p_(std::move(p)) { p_.validate(); }

  static constexpr const char* name() noexcept { return "power_sumrate"; }
  const PowerParams& params() const noexcept { return p_; }
  std::size_t n_nodes() const noexcept { return p_.n_nodes; }
  double noise_variance() const noexcept { return p_.noise_variance; }

  void sample_state(SplitMix64& rng, EnvState& s) const { detail::sample_rayleigh_gains(p_, rng, s); }

  double interference(std::size_t i, std::span<const double> a, const EnvState& s) const {
    double total = p_.sigma2;
    for (std::size_t j = 0; j < p_.n_nodes; ++j)
      if (j != i) total += s.gain(j, i) * std::exp(a[j]);
    return total;
  }

  double local_utility(std::size_t i, std::span<const double> a, const EnvState& s) const {
    const double direct = s.gain(i, i);
    if (!(direct > 0.0)) throw std::domain_error("sum-rate utility needs s_ii > 0");
    const double power = std::exp(a[i]);
    return p_.omega * std::log(direct * power / interference(i, a, s)) - p_.kappa * power;
  }

  double global_utility(std::span<const double> a, const EnvState& s) const {
    double total = 0.0;
    for (std::size_t i = 0; i < p_.n_nodes; ++i) total += local_utility(i, a, s);
    return total;
  }

  /// d f / d a_i = omega - omega sum_{n != i} s_in e^{a_i} / I_n - kappa e^{a_i}
  void exact_sample_gradient(std::span<const double> a, const EnvState& s,
                             std::span<double> out) const {
    const std::size_t n = p_.n_nodes;
    thread_local std::vector<double> inv_interference;
    inv_interference.resize(n);
    for (std::size_t m = 0; m < n; ++m) inv_interference[m] = 1.0 / interference(m, a, s);
    for (std::size_t i = 0; i < n; ++i) {
      const double power = std::exp(a[i]);
      double cross = 0.0;
      for (std::size_t m = 0; m < n; ++m)
        if (m != i) cross += s.gain(i, m) * inv_interference[m];
      out[i] = p_.omega - p_.omega * power * cross - p_.kappa * power;
    }
  }

  Box initial_box() const {
    return Box::uniform(p_.n_nodes, std::log(p_.a_min), std::log(p_.a_max));
  }
  Box default_bounds() const { return initial_box(); }

  /// Power uniform on (0, a_max], mapped to log-power and floored at log(a_min).
  void sample_initial_action(SplitMix64& rng, std::span<double> a) const {
    const double floor = std::log(p_.a_min);
    for (auto& v : a) v = std::max(floor, std::log(p_.a_max * (1.0 - rng.uniform01())));
  }

  std::optional<ActionVector> optimum() const { return std::nullopt; }
  std::optional<double> strong_concavity() const { return std::nullopt; }
  std::optional<double> hessian_bound() const { return std::nullopt; }

private:
  PowerParams p_;
};

// ---------------------------------------------------------------------------

template <class M>
concept Objective = requires(const M& m, SplitMix64& rng, EnvState& s, std::span<const double> a,
                             std::span<double> out) {
  { m.n_nodes() } -> std::convertible_to<std::size_t>;
  { m.noise_variance() } -> std::convertible_to<double>;
  m.sample_state(rng, s);
  { m.local_utility(std::size_t{}, a, s) } -> std::convertible_to<double>;
  { m.global_utility(a, s) } -> std::convertible_to<double>;
  m.exact_sample_gradient(a, s, out);
  { m.initial_box() } -> std::same_as<Box>;
  { m.default_bounds() } -> std::same_as<Box>;
  m.sample_initial_action(rng, out);
  { m.optimum() } -> std::same_as<std::optional<ActionVector>>;
};

template <Objective M>
EnvState sample_state(const M& m, SplitMix64& rng) {
  EnvState s;
  m.sample_state(rng, s);
  return s;
}

template <Objective M>
double local_utility(const M& m, std::size_t i, std::span<const double> a, const EnvState& s) {
  return m.local_utility(i, a, s);
}

/// u_i(a, S) + eta_i with eta ~ N(0, noise_variance); exact when the variance is 0.
template <Objective M>
double observe(const M& m, std::size_t i, std::span<const double> a, const EnvState& s,
               SplitMix64& rng) {
  const double u = m.local_utility(i, a, s);
  const double var = m.noise_variance();
  if (var == 0.0) return u;
  std::normal_distribution<double> eta(0.0, std::sqrt(var));
  return u + eta(rng);
}

template <Objective M>
std::vector<double> exact_sample_gradient(const M& m, std::span<const double> a,
                                          const EnvState& s) {
  std::vector<double> g(m.n_nodes());
  m.exact_sample_gradient(a, s, g);
  return g;
}

template <Objective M>
std::optional<ActionVector> optimum(const M& m) {
  return m.optimum();
}

/// F(a) = E_S f(a, S): closed form when the model has one, else a Monte Carlo
/// average over `samples` state draws with its standard error.
template <Objective M>
Estimate expected_objective(const M& m, std::span<const double> a, std::size_t samples,
                            SplitMix64& rng) {
  if constexpr (requires { m.closed_form_objective(a); }) {
    return Estimate{m.closed_form_objective(a), 0.0, true};
  } else {
    if (samples < 2) throw std::invalid_argument("Monte Carlo objective needs >= 2 samples");
    EnvState s;
    double mean = 0.0, m2 = 0.0;
    for (std::size_t t = 0; t < samples; ++t) {
      m.sample_state(rng, s);
      const double x = m.global_utility(a, s);
      const double delta = x - mean;
      mean += delta / static_cast<double>(t + 1);
      m2 += delta * (x - mean);
    }
    const double var = m2 / static_cast<double>(samples - 1);
    return Estimate{mean, std::sqrt(var / static_cast<double>(samples)), false};
  }
}

/// Monte Carlo F(a) regardless of closed-form availability.
template <Objective M>
Estimate sampled_objective(const M& m, std::span<const double> a, std::size_t samples,
                           SplitMix64& rng) {
  if (samples < 2) throw std::invalid_argument("Monte Carlo objective needs >= 2 samples");
  EnvState s;
  double mean = 0.0, m2 = 0.0;
  for (std::size_t t = 0; t < samples; ++t) {
    m.sample_state(rng, s);
    const double x = m.global_utility(a, s);
    const double delta = x - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta * (x - mean);
  }
  return Estimate{mean, std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples)),
                  false};
}

/// grad F(a): closed form when available, else the Monte Carlo mean of exact sample gradients.
template <Objective M>
VectorEstimate expected_gradient(const M& m, std::span<const double> a, std::size_t samples,
                                 SplitMix64& rng) {
  const std::size_t n = m.n_nodes();
  if constexpr (requires { m.closed_form_gradient(a); }) {
    return VectorEstimate{m.closed_form_gradient(a), std::vector<double>(n, 0.0), true};
  } else {
    if (samples < 2) throw std::invalid_argument("Monte Carlo gradient needs >= 2 samples");
    EnvState s;
    std::vector<double> g(n), mean(n, 0.0), m2(n, 0.0);
    for (std::size_t t = 0; t < samples; ++t) {
      m.sample_state(rng, s);
      m.exact_sample_gradient(a, s, g);
      for (std::size_t i = 0; i < n; ++i) {
        const double delta = g[i] - mean[i];
        mean[i] += delta / static_cast<double>(t + 1);
        m2[i] += delta * (g[i] - mean[i]);
      }
    }
    VectorEstimate e{mean, std::vector<double>(n), false};
    for (std::size_t i = 0; i < n; ++i)
      e.std_error[i] = std::sqrt(m2[i] / static_cast<double>(samples - 1) / static_cast<double>(samples));
    return e;
  }
}

} // namespace dosp
