#pragma once

// Distributed stochastic-perturbation steppers and the two reference baselines.
//
// One iteration k of the perturbation family:
//   phi_k ~ perturbation (or the sine schedule), a_hat = a_k + gamma_k phi_k,
//   u_i = observe(i, a_hat, S_k),
//   a_{k+1,i} = a_{k,i} + beta_k phi_{k,i} f_i,
// where f_i is the global sum (complete information) or node i's incomplete
// estimate. Under bounds the update is clamped to the box shrunk by
// alpha3 * gamma_{k+1} so that the next performed action stays feasible.
//
// All nodes observe the same S_k and update synchronously. Each random draw
// comes from its own (seed, replication, iteration, purpose, node) stream.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dosp/exchange.hpp"
#include "dosp/objectives.hpp"
#include "dosp/perturbation.hpp"
#include "dosp/rng.hpp"
#include "dosp/schedules.hpp"

namespace dosp {

enum class Variant { dosp, dosp_incomplete, sine_baseline, exact_gradient_baseline };

inline std::string_view to_string(Variant v) noexcept {
  switch (v) {
  case Variant::dosp: return "dosp";
  case Variant::dosp_incomplete: return "dosp_incomplete";
  case Variant::sine_baseline: return "sine_baseline";
  case Variant::exact_gradient_baseline: return "exact_gradient_baseline";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "dosp") return Variant::dosp;
  if (s == "dosp_incomplete") return Variant::dosp_incomplete;
  if (s == "sine_baseline" || s == "sine") return Variant::sine_baseline;
  if (s == "exact_gradient_baseline" || s == "exact_gradient") return Variant::exact_gradient_baseline;
  throw std::invalid_argument("unknown algo.variant '" + std::string(s) +
                              "' (expected dosp, dosp_incomplete, sine_baseline, "
                              "exact_gradient_baseline)");
}

/// Deterministic perturbation lambda_i sin(Omega_i t_k + phase_i).
struct SineParams {
  std::vector<double> amplitudes;
  std::vector<double> frequencies;
  std::vector<double> phases;

  /// Omega = (63, 70, 56, 49), lambda = 1.5, phase = 0.
  static SineParams reference_four_node() {
    return {{1.5, 1.5, 1.5, 1.5}, {63.0, 70.0, 56.0, 49.0}, {0.0, 0.0, 0.0, 0.0}};
  }

  double max_amplitude() const {
    double m = 0.0;
    for (double a : amplitudes) m = std::max(m, std::abs(a));
    return m;
  }

  void validate(std::size_t n) const {
    if (amplitudes.size() != n || frequencies.size() != n || phases.size() != n)
      throw std::invalid_argument("sine parameters need one amplitude, frequency and phase per node");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j && frequencies[i] == frequencies[j])
          throw std::invalid_argument("sine frequencies must be pairwise distinct");
        for (std::size_t l = 0; l < n; ++l)
          if (i != j && frequencies[i] + frequencies[j] == frequencies[l])
            throw std::invalid_argument("sine frequencies must avoid Omega_i + Omega_j = Omega_l");
      }
    }
  }
};

struct AlgoConfig {
  PowerLawSchedule schedule;
  PerturbationModel perturbation;
  std::optional<Box> bounds;
  std::optional<ExchangeModel> exchange;
  Variant variant = Variant::dosp;
  std::optional<SineParams> sine;

  /// Bound on |phi| used for the shrunken box.
  double perturbation_bound() const {
    if (variant == Variant::sine_baseline && sine) return sine->max_amplitude();
    return moments(perturbation).alpha3;
  }

  void validate(std::size_t n) const {
    perturbation.validate();
    if (bounds && bounds->size() != n) throw std::invalid_argument("bounds dimension mismatch");
    if (variant == Variant::sine_baseline) {
      if (!sine) throw std::invalid_argument("sine_baseline requires sine parameters");
      sine->validate(n);
    } else if (sine) {
      throw std::invalid_argument("sine parameters are only valid for sine_baseline");
    }
    if (variant == Variant::dosp_incomplete) {
      if (!exchange) throw std::invalid_argument("dosp_incomplete requires an exchange model");
      if (n < 2) throw std::invalid_argument("dosp_incomplete requires at least two nodes");
    }
  }
};

struct RunState {
  Iteration k = 0;
  ActionVector a;             ///< nominal action a_k
  double t = 0.0;             ///< accumulated beta (sine baseline)
  std::vector<double> last_phi;
};

struct IterationRecord {
  Iteration k = 0;
  ActionVector nominal_action;
  ActionVector performed_action;
  std::vector<double> phi;
  std::vector<double> observed;           ///< f~ (size 1) or per-node f~_i (incomplete)
  std::vector<double> gradient_estimate;  ///< g_hat applied in the update
  double nominal_utility = 0.0;           ///< f(a_k, S_k), noise free
};

// ---------------------------------------------------------------------------
// Projection

/// Clamp each component to [lower_i + margin, upper_i - margin].
inline void clamp_to_shrunken_box(std::span<double> a, const Box& box, double margin) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double lo = box.lower[i] + margin;
    const double hi = box.upper[i] - margin;
    a[i] = std::min(std::max(a[i], lo), hi);
  }
}

/// Componentwise clamp to [a_min + alpha3 gamma_{k_next}, a_max - alpha3 gamma_{k_next}].
inline ActionVector project(const ActionVector& candidate, Iteration k_next, const AlgoConfig& config) {
  if (!config.bounds) throw std::invalid_argument("project requires bounds");
  const double margin = config.perturbation_bound() * gamma(config.schedule, k_next);
  const Box& box = *config.bounds;
  for (std::size_t i = 0; i < box.size(); ++i)
    if (box.lower[i] + margin > box.upper[i] - margin)
      throw std::domain_error("shrunken box is empty at iteration " + std::to_string(k_next) +
                              ": perturbation step too large for the bounds");
  ActionVector out = candidate;
  clamp_to_shrunken_box(out, box, margin);
  return out;
}

/// Perturbation step actually applied at iteration k. Equals gamma_k unless the
/// shrunken box would be empty, in which case it is capped so the box
/// degenerates to its midpoint (early iterations with a large gamma_0).
inline double effective_gamma(const AlgoConfig& config, Iteration k) {
  const double g = gamma(config.schedule, k);
  if (!config.bounds) return g;
  const double bound = config.perturbation_bound();
  return std::min(g, config.bounds->min_half_width() / bound);
}

// ---------------------------------------------------------------------------
// Steppers

namespace detail {

template <Objective M>
class StepKernel {
public:
  StepKernel(const AlgoConfig& config, const M& objective)
      : config_(config), objective_(objective), n_(objective.n_nodes()) {
    utilities_.resize(n_);
  }

  void step(RunState& state, const StreamSource& streams, IterationRecord& rec) {
    switch (config_.variant) {
    case Variant::dosp: perturbation_step(state, streams, rec, false); break;
    case Variant::dosp_incomplete: perturbation_step(state, streams, rec, true); break;
    case Variant::sine_baseline: perturbation_step(state, streams, rec, false); break;
    case Variant::exact_gradient_baseline: gradient_step(state, streams, rec); break;
    }
  }

private:
  void draw_phi(RunState& state, const StreamSource& streams, Iteration k) {
    state.last_phi.resize(n_);
    if (config_.variant == Variant::sine_baseline) {
      const SineParams& sp = *config_.sine;
      // t_k = sum_{k'=1}^{k} beta_{k'}; t_0 = 0
      if (k >= 1) state.t += beta(config_.schedule, k);
      for (std::size_t i = 0; i < n_; ++i)
        state.last_phi[i] = sp.amplitudes[i] * std::sin(sp.frequencies[i] * state.t + sp.phases[i]);
      return;
    }
    for (std::size_t i = 0; i < n_; ++i) {
      SplitMix64 rng = streams.stream(k, Purpose::perturbation, i);
      state.last_phi[i] = sample_component(config_.perturbation, rng);
    }
  }

  void observe_all(std::span<const double> action, const StreamSource& streams, Iteration k) {
    for (std::size_t i = 0; i < n_; ++i) {
      SplitMix64 rng = streams.stream(k, Purpose::observation_noise, i);
      utilities_[i] = observe(objective_, i, action, env_, rng);
    }
  }

  void perturbation_step(RunState& state, const StreamSource& streams, IterationRecord& rec,
                         bool incomplete) {
    const Iteration k = state.k;
    const double b = beta(config_.schedule, k);
    const double g = effective_gamma(config_, k);

    draw_phi(state, streams, k);
    {
      SplitMix64 rng = streams.stream(k, Purpose::environment);
      objective_.sample_state(rng, env_);
    }

    rec.k = k;
    rec.nominal_action = state.a;
    rec.phi = state.last_phi;
    rec.performed_action.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) rec.performed_action[i] = state.a[i] + g * state.last_phi[i];
    // (lo + g) - g can round one ulp below lo
    if (config_.bounds) clamp_to_shrunken_box(rec.performed_action, *config_.bounds, 0.0);
    rec.nominal_utility = objective_.global_utility(state.a, env_);

    observe_all(rec.performed_action, streams, k);

    rec.gradient_estimate.resize(n_);
    if (!incomplete) {
      double total = 0.0;
      for (double u : utilities_) total += u;
      rec.observed.assign(1, total);
      for (std::size_t i = 0; i < n_; ++i) rec.gradient_estimate[i] = state.last_phi[i] * total;
    } else {
      rec.observed.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) {
        SplitMix64 rng = streams.stream(k, Purpose::exchange, i);
        subset_ = sample_subset(*config_.exchange, n_, i, rng);
        rec.observed[i] = incomplete_estimate(i, utilities_, subset_);
        rec.gradient_estimate[i] = state.last_phi[i] * rec.observed[i];
      }
    }

    for (std::size_t i = 0; i < n_; ++i) state.a[i] += b * rec.gradient_estimate[i];
    if (config_.bounds) {
      const double margin = config_.perturbation_bound() * effective_gamma(config_, k + 1);
      clamp_to_shrunken_box(state.a, *config_.bounds, margin);
    }
    state.k = k + 1;
  }

  void gradient_step(RunState& state, const StreamSource& streams, IterationRecord& rec) {
    const Iteration k = state.k;
    const double b = beta(config_.schedule, k);
    {
      SplitMix64 rng = streams.stream(k, Purpose::environment);
      objective_.sample_state(rng, env_);
    }
    rec.k = k;
    rec.nominal_action = state.a;
    rec.performed_action = state.a;
    rec.phi.assign(n_, 0.0);
    rec.nominal_utility = objective_.global_utility(state.a, env_);
    observe_all(state.a, streams, k);
    double total = 0.0;
    for (double u : utilities_) total += u;
    rec.observed.assign(1, total);

    rec.gradient_estimate.resize(n_);
    objective_.exact_sample_gradient(state.a, env_, rec.gradient_estimate);
    for (std::size_t i = 0; i < n_; ++i) state.a[i] += b * rec.gradient_estimate[i];
    if (config_.bounds) clamp_to_shrunken_box(state.a, *config_.bounds, 0.0);
    state.k = k + 1;
  }

  const AlgoConfig& config_;
  const M& objective_;
  std::size_t n_;
  EnvState env_;
  std::vector<double> utilities_;
  NodeSet subset_;
};

template <Objective M>
IterationRecord single_step(RunState& state, const AlgoConfig& config, const M& objective,
                            const StreamSource& streams, Variant expected) {
  if (config.variant != expected)
    throw std::invalid_argument("stepper called with algo.variant " +
                                std::string(to_string(config.variant)));
  config.validate(objective.n_nodes());
  IterationRecord rec;
  StepKernel<M>(config, objective).step(state, streams, rec);
  return rec;
}

} // namespace detail

template <Objective M>
IterationRecord step_dosp(RunState& state, const AlgoConfig& config, const M& objective,
                          const StreamSource& streams) {
  return detail::single_step(state, config, objective, streams, Variant::dosp);
}

template <Objective M>
IterationRecord step_dosp_incomplete(RunState& state, const AlgoConfig& config, const M& objective,
                                     const StreamSource& streams) {
  return detail::single_step(state, config, objective, streams, Variant::dosp_incomplete);
}

template <Objective M>
IterationRecord step_sine_baseline(RunState& state, const AlgoConfig& config, const M& objective,
                                   const StreamSource& streams) {
  return detail::single_step(state, config, objective, streams, Variant::sine_baseline);
}

template <Objective M>
IterationRecord step_exact_gradient_baseline(RunState& state, const AlgoConfig& config,
                                             const M& objective, const StreamSource& streams) {
  return detail::single_step(state, config, objective, streams, Variant::exact_gradient_baseline);
}

// ---------------------------------------------------------------------------
// Recording and full runs

/// Which iterations get recorded: every `stride`-th iteration, or (stride 0)
/// every iteration up to `dense_until` and then `per_decade` log-spaced points.
/// The first and last iterations are always recorded.
struct RecordPolicy {
  Iteration stride = 0;
  Iteration dense_until = 1000;
  int per_decade = 50;

  std::vector<Iteration> iterations(Iteration first, Iteration last) const {
    std::set<Iteration> ks;
    ks.insert(first);
    ks.insert(last);
    if (stride > 0) {
      for (Iteration k = first; k <= last; k += stride) ks.insert(k);
    } else {
      for (Iteration k = first; k <= std::min(last, dense_until); ++k) ks.insert(k);
      const double lo = std::log10(static_cast<double>(std::max<Iteration>(dense_until, 1)));
      const double hi = std::log10(static_cast<double>(std::max<Iteration>(last, 1)));
      for (int j = 1; lo + j / static_cast<double>(per_decade) <= hi + 1e-12; ++j) {
        const auto k = static_cast<Iteration>(std::llround(std::pow(10.0, lo + j / static_cast<double>(per_decade))));
        if (k >= first && k <= last) ks.insert(k);
      }
    }
    return {ks.begin(), ks.end()};
  }
};

/// Starting state: a_0 drawn from the objective's initialization box, then
/// pulled into the feasible (shrunken) box of the first iteration.
template <Objective M>
RunState initial_state(const AlgoConfig& config, const M& objective, const StreamSource& streams) {
  RunState state;
  state.k = config.schedule.first_iteration();
  state.a.resize(objective.n_nodes());
  SplitMix64 rng = streams.stream(0, Purpose::initial_action);
  objective.sample_initial_action(rng, state.a);
  if (config.bounds) {
    const double margin = config.variant == Variant::exact_gradient_baseline
                              ? 0.0
                              : config.perturbation_bound() * effective_gamma(config, state.k);
    clamp_to_shrunken_box(state.a, *config.bounds, margin);
  }
  return state;
}

/// Runs `horizon` iterations and hands each recorded iteration to `observer`.
template <Objective M, class Observer>
RunState run_observed(const AlgoConfig& config, const M& objective, Iteration horizon,
                      const StreamSource& streams, std::span<const Iteration> record_at,
                      Observer&& observer) {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  config.validate(objective.n_nodes());
  RunState state = initial_state(config, objective, streams);
  detail::StepKernel<M> kernel(config, objective);
  IterationRecord rec;
  std::size_t next = 0;
  const Iteration last = state.k + horizon - 1;
  while (state.k <= last) {
    kernel.step(state, streams, rec);
    while (next < record_at.size() && record_at[next] < rec.k) ++next;
    if (next < record_at.size() && record_at[next] == rec.k) {
      observer(rec, state);
      ++next;
    }
  }
  return state;
}

struct RunTrace {
  std::vector<IterationRecord> records;
  RunState final_state;
};

template <Objective M>
RunTrace run(const AlgoConfig& config, const M& objective, Iteration horizon,
             const StreamSource& streams, const RecordPolicy& policy = {}) {
  const Iteration first = config.schedule.first_iteration();
  const auto ks = policy.iterations(first, first + horizon - 1);
  RunTrace trace;
  trace.final_state = run_observed(config, objective, horizon, streams, ks,
                                   [&](const IterationRecord& rec, const RunState&) {
                                     trace.records.push_back(rec);
                                   });
  return trace;
}

} // namespace dosp
