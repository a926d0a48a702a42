#pragma once

// Experiment definitions, built-in reproductions, the runner and its
// CSV / JSON outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "dosp/algorithms.hpp"
#include "dosp/analysis.hpp"
#include "dosp/config.hpp"
#include "dosp/exchange.hpp"
#include "dosp/objectives.hpp"
#include "dosp/perturbation.hpp"
#include "dosp/schedules.hpp"

namespace dosp {

namespace fs = std::filesystem;

enum class ExperimentKind { simulation, bias_check, lemma3_check, lemma7_grid, gradient_check };

struct ObjectiveSpec {
  std::string kind = "toy"; ///< toy, power_pf, power_sumrate
  PowerParams power;
  double toy_noise_variance = 0.0;
};

struct SeriesSpec {
  std::string label;
  AlgoConfig algo;
};

struct StudySpec {
  std::string id;
  std::vector<SeriesSpec> series;
  Iteration horizon = 10'000;
  std::size_t replications = 100;
  Iteration record_stride = 0;
};

enum class CheckKind { envelope_bound, ratio_exceeds, plateau_match, reach_order, monotone_in_p };

struct CheckSpec {
  std::string id;
  CheckKind kind = CheckKind::envelope_bound;
  std::string study;
  std::vector<std::string> series;
  Iteration lo = 0;
  Iteration hi = 0;
  double omega = 2.0;
  double tolerance = 0.0;
  bool hard = true;
};

struct ExperimentSpec {
  std::string name;
  ExperimentKind kind = ExperimentKind::simulation;
  ObjectiveSpec objective;
  std::vector<StudySpec> studies;
  std::uint64_t seed = 1;
  bool allow_invalid_schedule = false;
  double envelope_omega = 2.0;
  Iteration optimum_horizon = 1'000'000;
  std::size_t optimum_replications = 50;
  std::size_t samples = 1'000'000; ///< Monte Carlo budget of the check suites
  std::vector<CheckSpec> checks;
};

struct Assertion {
  std::string id;
  std::string status; ///< pass, fail or info
  double measured = 0.0;
  double bound = 0.0;
  double tolerance = 0.0;
  bool hard = true;

  bool passed() const { return status != "fail"; }
};

// ---------------------------------------------------------------------------
// Objectives

using ObjectiveModel = std::variant<QuadraticToy, ProportionalFairPower, SumRatePower>;

inline ObjectiveModel make_objective(const ObjectiveSpec& spec) {
  if (spec.kind == "toy") return QuadraticToy(spec.toy_noise_variance);
  if (spec.kind == "power_pf") return ProportionalFairPower(spec.power);
  if (spec.kind == "power_sumrate") return SumRatePower(spec.power);
  throw ConfigError("objective.kind: unknown objective '" + spec.kind +
                    "' (expected toy, power_pf, power_sumrate)");
}

inline std::size_t objective_nodes(const ObjectiveSpec& spec) {
  return spec.kind == "toy" ? 2 : spec.power.n_nodes;
}

// ---------------------------------------------------------------------------
// Built-in experiments

namespace detail {

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline AlgoConfig toy_dosp(double beta0, double nu1, double gamma0, double nu2) {
  QuadraticToy toy;
  return AlgoConfig{PowerLawSchedule{beta0, nu1, gamma0, nu2, 1}, PerturbationModel::bernoulli(1.0),
                    toy.default_bounds(), std::nullopt, Variant::dosp, std::nullopt};
}

inline AlgoConfig power_config(const PowerParams& p, PowerLawSchedule schedule, Variant v,
                               std::optional<double> exchange_p = std::nullopt) {
  AlgoConfig c{schedule, PerturbationModel::bernoulli(1.0), Box::uniform(p.n_nodes, p.a_min, p.a_max),
               std::nullopt, v, std::nullopt};
  if (exchange_p) c.exchange = ExchangeModel(*exchange_p);
  if (v == Variant::sine_baseline) c.sine = SineParams::reference_four_node();
  return c;
}

inline ExperimentSpec fig3() {
  ExperimentSpec s;
  s.name = "fig3";
  StudySpec st{"main", {}, 100'000, 1000, 0};
  for (double b0 : {0.23, 0.28, 0.5})
    st.series.push_back({"beta0_" + format_number(b0), toy_dosp(b0, 0.75, 1.0, 0.25)});
  s.studies.push_back(st);
  for (const char* b : {"beta0_0.28", "beta0_0.5"})
    s.checks.push_back({std::string("fig3.envelope.") + b, CheckKind::envelope_bound, "main", {b},
                        1000, 100'000, 2.0, 0.0, true});
  s.checks.push_back({"fig3.ordinal.beta0_0.23_vs_0.5", CheckKind::ratio_exceeds, "main",
                      {"beta0_0.23", "beta0_0.5"}, 1000, 100'000, 2.0, 0.0, true});
  return s;
}

inline ExperimentSpec fig4() {
  ExperimentSpec s;
  s.name = "fig4";
  // (0.5, 0.2) violates square summability of beta_k but is part of the figure
  s.allow_invalid_schedule = true;
  StudySpec st{"main", {}, 100'000, 1000, 0};
  const std::pair<double, double> pairs[] = {{0.55, 0.15}, {0.7, 0.15}, {0.5, 0.2}, {0.65, 0.35}};
  for (auto [n1, n2] : pairs) {
    const std::string label = "nu_" + format_number(n1) + "_" + format_number(n2);
    st.series.push_back({label, toy_dosp(0.4, n1, 1.0, n2)});
    s.checks.push_back({"fig4.envelope." + label, CheckKind::envelope_bound, "main", {label}, 10'000,
                        100'000, 2.0, 0.0, true});
  }
  s.studies.push_back(st);
  return s;
}

inline ExperimentSpec fig5_7() {
  ExperimentSpec s;
  s.name = "fig5_7";
  s.objective.kind = "power_pf";
  s.objective.power.n_nodes = 4;
  const PowerParams& p = s.objective.power;
  const PowerLawSchedule sched{2.5, 0.75, 12.0, 0.25, 0};

  StudySpec fig5{"fig5", {}, 10'000, 500, 0};
  fig5.series.push_back({"dosp", power_config(p, sched, Variant::dosp)});
  fig5.series.push_back({"sine_baseline", power_config(p, sched, Variant::sine_baseline)});
  fig5.series.push_back({"exact_gradient_baseline", power_config(p, sched, Variant::exact_gradient_baseline)});
  s.studies.push_back(fig5);

  StudySpec fig7{"fig7", {}, 10'000, 100, 0};
  for (double pe : {1.0, 0.5, 0.25, 0.1})
    fig7.series.push_back({"p_" + format_number(pe), power_config(p, sched, Variant::dosp_incomplete, pe)});
  s.studies.push_back(fig7);

  s.checks.push_back({"fig5.plateau", CheckKind::plateau_match, "fig5",
                      {"dosp", "exact_gradient_baseline"}, 1000, 10'000, 0.0, 0.05, true});
  s.checks.push_back({"fig5.reach_order", CheckKind::reach_order, "fig5",
                      {"dosp", "sine_baseline", "exact_gradient_baseline"}, 1000, 10'000, 0.0, 0.10, true});
  s.checks.push_back({"fig7.monotone_in_p", CheckKind::monotone_in_p, "fig7",
                      {"p_1", "p_0.5", "p_0.25", "p_0.1"}, 1000, 10'000, 0.0, 0.0, true});
  return s;
}

inline ExperimentSpec fig8() {
  ExperimentSpec s;
  s.name = "fig8";
  s.objective.kind = "power_pf";
  s.objective.power.n_nodes = 10;
  const PowerLawSchedule sched{2.0, 0.75, 12.0, 0.25, 1};
  StudySpec st{"main", {}, 10'000, 100, 0};
  for (double pe : {1.0, 0.5, 0.25, 0.1})
    st.series.push_back({"p_" + format_number(pe),
                         power_config(s.objective.power, sched, Variant::dosp_incomplete, pe)});
  s.studies.push_back(st);
  s.checks.push_back({"fig8.monotone_in_p", CheckKind::monotone_in_p, "main",
                      {"p_1", "p_0.5", "p_0.25", "p_0.1"}, 1000, 10'000, 0.0, 0.0, false});
  return s;
}

inline ExperimentSpec suite(const char* name, ExperimentKind kind) {
  ExperimentSpec s;
  s.name = name;
  s.kind = kind;
  return s;
}

} // namespace detail

inline const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names{"fig3",         "fig4",         "fig5_7",      "fig8",
                                              "bias_check",   "lemma3_check", "lemma7_grid", "gradient_check"};
  return names;
}

inline std::string builtin_name_list() {
  std::string s;
  for (const auto& n : builtin_names()) s += (s.empty() ? "" : ", ") + n;
  return s;
}

inline bool is_builtin(const std::string& name) {
  const auto& n = builtin_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

inline ExperimentSpec builtin_spec(const std::string& name) {
  if (name == "fig3") return detail::fig3();
  if (name == "fig4") return detail::fig4();
  if (name == "fig5_7") return detail::fig5_7();
  if (name == "fig8") return detail::fig8();
  if (name == "bias_check") return detail::suite("bias_check", ExperimentKind::bias_check);
  if (name == "lemma3_check") return detail::suite("lemma3_check", ExperimentKind::lemma3_check);
  if (name == "lemma7_grid") return detail::suite("lemma7_grid", ExperimentKind::lemma7_grid);
  if (name == "gradient_check") return detail::suite("gradient_check", ExperimentKind::gradient_check);
  throw ConfigError("unknown experiment '" + name + "'; valid names: " + builtin_name_list());
}

// ---------------------------------------------------------------------------
// Config files

/// Builds a single-study simulation from a config file. `beta0`,
/// `algo.variant` and `exchange.p` may be lists; each combination becomes a series.
inline ExperimentSpec spec_from_config(const Config& cfg) {
  ExperimentSpec s;
  s.name = cfg.get_string("name", fs::path(cfg.source()).stem().string());
  s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
  s.allow_invalid_schedule = cfg.get_bool("allow_invalid_schedule", false);
  s.envelope_omega = cfg.get_double("analysis.omega", 2.0);
  s.optimum_horizon = cfg.get_int("optimum.horizon", s.optimum_horizon);
  s.optimum_replications = static_cast<std::size_t>(cfg.get_int("optimum.replications", 50));

  ObjectiveSpec& o = s.objective;
  o.kind = cfg.get_string("objective.kind", "toy");
  if (o.kind != "toy" && o.kind != "power_pf" && o.kind != "power_sumrate")
    throw cfg.error("objective.kind", "unknown objective '" + o.kind + "' (expected toy, power_pf, power_sumrate)");
  const std::int64_t n_nodes = cfg.get_int("objective.n_nodes", o.kind == "toy" ? 2 : 4);
  if (o.kind == "toy" && n_nodes != 2) throw cfg.error("objective.n_nodes", "the toy objective has exactly 2 nodes");
  if (n_nodes < 1) throw cfg.error("objective.n_nodes", "must be at least 1");
  o.power.n_nodes = static_cast<std::size_t>(n_nodes);
  o.power.omega = cfg.get_double("omega", o.power.omega);
  o.power.kappa = cfg.get_double("kappa", o.power.kappa);
  o.power.sigma2 = cfg.get_double("sigma2", o.power.sigma2);
  const double noise = cfg.get_double("noise_variance", 0.0);
  if (noise < 0.0) throw cfg.error("noise_variance", "must be >= 0");
  o.power.noise_variance = noise;
  o.toy_noise_variance = noise;
  o.power.a_max = cfg.get_double("a_max", o.power.a_max);
  o.power.a_min = cfg.get_double("bounds.min", o.power.a_min);
  if (o.kind == "power_pf" || o.kind == "power_sumrate") {
    try {
      o.power.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(cfg.source() + ": objective: " + e.what());
    }
  }

  StudySpec st;
  st.id = "main";
  st.horizon = cfg.get_int("algo.horizon", 10'000);
  if (st.horizon < 1) throw cfg.error("algo.horizon", "must be at least 1");
  const std::int64_t reps = cfg.get_int("replications", 100);
  if (reps < 1) throw cfg.error("replications", "must be at least 1");
  st.replications = static_cast<std::size_t>(reps);
  st.record_stride = cfg.get_int("algo.record_stride", 0);
  if (st.record_stride < 0) throw cfg.error("algo.record_stride", "must be >= 0");

  PowerLawSchedule base;
  base.nu1 = cfg.get_double("nu1", base.nu1);
  base.gamma0 = cfg.get_double("gamma0", base.gamma0);
  base.nu2 = cfg.get_double("nu2", base.nu2);
  const std::int64_t offset = cfg.get_int("index_offset", 1);
  if (offset != 0 && offset != 1) throw cfg.error("index_offset", "must be 0 or 1");
  base.index_offset = static_cast<int>(offset);
  const auto beta0s = cfg.get_doubles("beta0", {1.0});

  const double amplitude = cfg.get_double("perturbation.amplitude", 1.0);
  if (!(amplitude > 0.0)) throw cfg.error("perturbation.amplitude", "must be positive");

  std::vector<Variant> variants;
  for (const auto& v : cfg.get_strings("algo.variant", {"dosp"})) {
    try {
      variants.push_back(parse_variant(v));
    } catch (const std::invalid_argument& e) {
      throw cfg.error("algo.variant", e.what());
    }
  }
  const auto ps = cfg.get_doubles("exchange.p", {1.0});
  for (double p : ps)
    if (!(p > 0.0 && p <= 1.0)) throw cfg.error("exchange.p", "must lie in (0, 1], got " + detail::format_number(p));

  const std::size_t n = objective_nodes(o);
  std::optional<Box> bounds;
  if (cfg.get_bool("bounds.enabled", true)) {
    Box def = std::visit([](const auto& m) { return m.default_bounds(); }, make_objective(o));
    const double lo = cfg.get_double("bounds.min", def.lower.front());
    const double hi = cfg.get_double("bounds.max", def.upper.front());
    if (!(lo < hi)) throw cfg.error("bounds.max", "must exceed bounds.min");
    bounds = Box::uniform(n, lo, hi);
  }

  std::optional<SineParams> sine;
  const auto omegas = cfg.get_doubles("sine.omegas", {});
  const auto lambdas = cfg.get_doubles("sine.lambda", {1.5});
  const auto phases = cfg.get_doubles("sine.phase", {0.0});
  auto expand = [&](const std::vector<double>& v, const char* key) {
    if (v.size() == 1) return std::vector<double>(n, v.front());
    if (v.size() != n) throw cfg.error(key, "needs 1 or " + std::to_string(n) + " values");
    return v;
  };
  const bool wants_sine = std::find(variants.begin(), variants.end(), Variant::sine_baseline) != variants.end();
  if (wants_sine) {
    if (omegas.empty() && n == 4) {
      sine = SineParams::reference_four_node();
    } else if (omegas.size() != n) {
      throw cfg.error("sine.omegas", "sine_baseline needs one frequency per node");
    } else {
      sine = SineParams{expand(lambdas, "sine.lambda"), omegas, expand(phases, "sine.phase")};
    }
    if (cfg.has("sine.lambda") || cfg.has("sine.phase")) {
      sine->amplitudes = expand(lambdas, "sine.lambda");
      sine->phases = expand(phases, "sine.phase");
    }
  }

  const bool sweep_beta = beta0s.size() > 1;
  const bool sweep_variant = variants.size() > 1;
  for (double b0 : beta0s) {
    for (Variant v : variants) {
      const bool uses_p = v == Variant::dosp_incomplete;
      const std::vector<double> p_values = uses_p ? ps : std::vector<double>{1.0};
      for (double p : p_values) {
        SeriesSpec series;
        std::string label;
        auto append = [&](const std::string& part) { label += (label.empty() ? "" : "_") + part; };
        if (sweep_variant || (!sweep_beta && !(uses_p && ps.size() > 1))) append(std::string(to_string(v)));
        if (sweep_beta) append("beta0_" + detail::format_number(b0));
        if (uses_p && (ps.size() > 1 || sweep_variant)) append("p_" + detail::format_number(p));
        series.label = label;
        series.algo.schedule = base;
        series.algo.schedule.beta0 = b0;
        series.algo.perturbation = PerturbationModel::bernoulli(amplitude);
        series.algo.bounds = bounds;
        series.algo.variant = v;
        if (uses_p) series.algo.exchange = ExchangeModel(p);
        if (v == Variant::sine_baseline) series.algo.sine = sine;
        st.series.push_back(series);
      }
    }
  }
  s.studies.push_back(st);
  cfg.reject_unknown();
  return s;
}

/// Problems that make a spec unrunnable; empty when valid.
inline std::vector<std::string> validate_spec(const ExperimentSpec& spec, bool allow_invalid_schedule) {
  std::vector<std::string> problems;
  if (spec.kind != ExperimentKind::simulation) return problems;
  const std::size_t n = objective_nodes(spec.objective);
  for (const auto& st : spec.studies) {
    if (st.series.empty()) problems.push_back(st.id + ": no series");
    for (const auto& se : st.series) {
      const std::string where = st.id + "/" + (se.label.empty() ? "series" : se.label);
      const A4Report r = validate_a4(se.algo.schedule);
      if (!r.valid() && !(allow_invalid_schedule || spec.allow_invalid_schedule))
        problems.push_back(where + ": step-size schedule rejected, " + r.failure());
      try {
        se.algo.validate(n);
      } catch (const std::exception& e) {
        problems.push_back(where + ": " + e.what());
      }
    }
  }
  return problems;
}

// ---------------------------------------------------------------------------
// Output helpers

namespace detail {

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

struct SeriesOutcome {
  std::string study;
  std::string label;
  AlgoConfig algo;
  MonteCarloResult mc;
  std::optional<RateConstants> constants;
  std::optional<RateDiagnostics> diagnostics;
  std::optional<Theorem4Envelopes> envelopes;
  double theorem5_omega = std::numeric_limits<double>::quiet_NaN();
};

inline const SeriesOutcome& find_series(const std::vector<SeriesOutcome>& all, const std::string& study,
                                        const std::string& label) {
  for (const auto& s : all)
    if (s.study == study && s.label == label) return s;
  throw std::logic_error("check refers to unknown series " + study + "/" + label);
}

} // namespace detail

struct RunOptions {
  fs::path out_dir = "results";
  unsigned jobs = 0;
  std::ostream* log = nullptr;
  std::optional<std::size_t> replications_override;
};

struct ExperimentResult {
  std::string name;
  std::vector<Assertion> assertions;
  std::vector<fs::path> csv_files;
  fs::path summary_file;
  nlohmann::json summary;
  std::vector<detail::SeriesOutcome> series;

  bool all_hard_passed() const {
    for (const auto& a : assertions)
      if (a.hard && !a.passed()) return false;
    return true;
  }
  const Assertion* find(const std::string& id) const {
    for (const auto& a : assertions)
      if (a.id == id) return &a;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Optimum of the power models

/// a* for models without a closed form: mean final iterate of a long
/// exact-gradient run, cached under out_dir/cache keyed by model and seed.
template <Objective M>
ActionVector empirical_optimum(const M& objective, const ObjectiveSpec& ospec, const PowerLawSchedule& schedule,
                               Iteration horizon, std::size_t replications, std::uint64_t seed,
                               const RunOptions& opts) {
  std::ostringstream key;
  key << ospec.kind << "_n" << objective.n_nodes() << "_w" << detail::csv_number(ospec.power.omega) << "_k"
      << detail::csv_number(ospec.power.kappa) << "_s" << detail::csv_number(ospec.power.sigma2) << "_e"
      << detail::csv_number(ospec.power.noise_variance) << "_lo" << detail::csv_number(ospec.power.a_min)
      << "_hi" << detail::csv_number(ospec.power.a_max) << "_b" << detail::csv_number(schedule.beta0) << "_"
      << detail::csv_number(schedule.nu1) << "_o" << schedule.index_offset << "_T" << horizon << "_R"
      << replications << "_seed" << seed;
  const fs::path cache = opts.out_dir / "cache" / ("optimum_" + key.str() + ".csv");
  if (std::ifstream in(cache); in) {
    ActionVector a;
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) a.push_back(std::stod(line));
    if (a.size() == objective.n_nodes()) return a;
  }
  if (opts.log) *opts.log << "  computing a* (" << replications << " x " << horizon << " exact-gradient steps)\n";
  AlgoConfig cfg{schedule, PerturbationModel::bernoulli(1.0), objective.default_bounds(), std::nullopt,
                 Variant::exact_gradient_baseline, std::nullopt};
  MonteCarloOptions mco;
  mco.jobs = opts.jobs;
  mco.record.stride = horizon;
  const auto mc = monte_carlo(cfg, objective, horizon, replications, seed ^ 0xa5a5a5a5ULL, std::nullopt, mco);
  auto out = detail::open_output(cache);
  for (double v : mc.mean_final_action) out << detail::csv_number(v) << "\n";
  return mc.mean_final_action;
}

// ---------------------------------------------------------------------------
// Checks over simulation results

namespace detail {

inline std::optional<Iteration> first_within(const MonteCarloResult& mc, double target, double rel) {
  for (std::size_t j = 0; j < mc.ks.size(); ++j)
    if (std::abs(mc.utility.mean[j] - target) <= rel * std::abs(target)) return mc.ks[j];
  return std::nullopt;
}

inline Assertion evaluate_check(const CheckSpec& c, const std::vector<SeriesOutcome>& all) {
  Assertion a;
  a.id = c.id;
  a.tolerance = c.tolerance;
  a.hard = c.hard;
  auto verdict = [&](bool ok) { a.status = ok ? "pass" : (c.hard ? "fail" : "info"); };

  switch (c.kind) {
  case CheckKind::envelope_bound: {
    const auto& s = find_series(all, c.study, c.series.at(0));
    const auto& d = s.mc.divergence.value();
    double worst = 0.0;
    for (std::size_t j = 0; j < s.mc.ks.size(); ++j) {
      const Iteration k = s.mc.ks[j];
      if (k < c.lo || k > c.hi) continue;
      worst = std::max(worst, d.mean[j] / theorem5_envelope(s.algo.schedule, c.omega, k));
    }
    a.measured = worst; // max D_k / envelope
    a.bound = 1.0;
    verdict(worst <= 1.0);
    break;
  }
  case CheckKind::ratio_exceeds: {
    auto avg_ratio = [&](const std::string& label) {
      const auto& s = find_series(all, c.study, label);
      return window_average(s.mc.ks, s.mc.divergence.value().mean, c.lo, c.hi, [&](Iteration k) {
        return 1.0 / theorem5_envelope(s.algo.schedule, c.omega, k);
      });
    };
    a.measured = avg_ratio(c.series.at(0));
    a.bound = avg_ratio(c.series.at(1));
    verdict(a.measured > a.bound);
    break;
  }
  case CheckKind::plateau_match: {
    const auto& s = find_series(all, c.study, c.series.at(0));
    const auto& ref = find_series(all, c.study, c.series.at(1));
    const double plateau = window_average(ref.mc.ks, ref.mc.utility.mean, c.lo, c.hi);
    const double final_value = s.mc.utility.mean.back();
    a.measured = std::abs(final_value - plateau) / std::abs(plateau);
    a.bound = c.tolerance;
    verdict(a.measured <= c.tolerance);
    break;
  }
  case CheckKind::reach_order: {
    const auto& s = find_series(all, c.study, c.series.at(0));
    const auto& other = find_series(all, c.study, c.series.at(1));
    const auto& ref = find_series(all, c.study, c.series.at(2));
    const double plateau = window_average(ref.mc.ks, ref.mc.utility.mean, c.lo, c.hi);
    const auto k_s = first_within(s.mc, plateau, c.tolerance);
    const auto k_o = first_within(other.mc, plateau, c.tolerance);
    const double never = std::numeric_limits<double>::infinity();
    a.measured = k_s ? static_cast<double>(*k_s) : never;
    a.bound = k_o ? static_cast<double>(*k_o) : never;
    verdict(k_s.has_value() && a.measured < a.bound);
    break;
  }
  case CheckKind::monotone_in_p: {
    std::vector<double> avg;
    for (const auto& label : c.series) {
      const auto& s = find_series(all, c.study, label);
      const double n = static_cast<double>(s.mc.n_nodes);
      avg.push_back(window_average(s.mc.ks, s.mc.divergence.value().mean, c.lo, c.hi) / n);
    }
    double min_step = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < avg.size(); ++i) min_step = std::min(min_step, avg[i] - avg[i - 1]);
    a.measured = min_step; // smallest increase of window-averaged D_k/N as p decreases
    a.bound = 0.0;
    verdict(min_step >= 0.0);
    break;
  }
  }
  return a;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Check suites

namespace detail {

inline void write_rows(const fs::path& path, const std::string& header,
                       const std::vector<std::vector<std::string>>& rows) {
  auto out = open_output(path);
  out << header << "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
    out << "\n";
  }
}

inline void run_bias_check(const ExperimentSpec& spec, const fs::path& dir, ExperimentResult& res) {
  const QuadraticToy toy;
  const auto pert = PerturbationModel::bernoulli(1.0);
  const auto mom = moments(pert);
  const std::vector<ActionVector> points{{0.0, 0.0}, {2.0, 1.0}, {0.5, 2.5}};
  const double gammas[] = {1.0, 0.5, 0.1};
  std::vector<std::vector<std::string>> rows;
  std::uint64_t stream = spec.seed;
  for (const auto& a : points) {
    for (double g : gammas) {
      for (int incomplete = 0; incomplete < 2; ++incomplete) {
        std::optional<ExchangeModel> ex;
        if (incomplete) ex = ExchangeModel(0.5);
        const auto b = empirical_bias(toy, a, g, pert, spec.samples, mix64(++stream), ex);
        const double norm = std::hypot(b.value[0], b.value[1]);
        const double se_norm = std::hypot(b.std_error[0], b.std_error[1]);
        const double bound = bias_bound(g, 2, *toy.hessian_bound(), mom.alpha2, mom.alpha3);
        const std::string tag = "bias." + std::string(incomplete ? "incomplete_p0.5" : "complete") + ".a_" +
                                format_number(a[0]) + "_" + format_number(a[1]) + ".gamma_" + format_number(g);
        if (!incomplete) {
          res.assertions.push_back({tag + ".bound", norm <= bound + 4.0 * se_norm ? "pass" : "fail", norm,
                                    bound, 4.0 * se_norm, true});
        }
        const double z = std::max(std::abs(b.value[0]) / b.std_error[0], std::abs(b.value[1]) / b.std_error[1]);
        res.assertions.push_back({tag + ".zero", z <= 4.0 ? "pass" : "fail", z, 4.0, 0.0, true});
        rows.push_back({format_number(a[0]), format_number(a[1]), csv_number(g), incomplete ? "0.5" : "1",
                        csv_number(b.value[0]), csv_number(b.value[1]), csv_number(b.std_error[0]),
                        csv_number(b.std_error[1]), csv_number(norm), csv_number(bound)});
      }
    }
  }
  const fs::path f = dir / "bias.csv";
  write_rows(f, "a1,a2,gamma,p,bias_1,bias_2,stderr_1,stderr_2,bias_norm,bias_bound", rows);
  res.csv_files.push_back(f);
}

inline void run_lemma3_check(const ExperimentSpec& spec, const fs::path& dir, ExperimentResult& res) {
  SplitMix64 rng(mix64(spec.seed));
  std::uniform_real_distribution<double> util(-10.0, 10.0);
  std::vector<std::vector<std::string>> rows;
  double worst = 0.0;
  double worst_paper = 0.0;
  for (std::size_t n = 2; n <= 6; ++n) {
    for (double p : {0.1, 0.25, 0.5, 0.9, 1.0}) {
      const auto q = q_nonempty(ExchangeModel(p), n);
      double err = 0.0, err_paper = 0.0;
      for (int t = 0; t < 100; ++t) {
        std::vector<double> u(n);
        for (auto& v : u) v = util(rng);
        double total = 0.0;
        for (double v : u) total += v;
        for (std::size_t i = 0; i < n; ++i) {
          const double e = lemma3_enumeration_oracle(i, u, p);
          err = std::max(err, std::abs(e - q.q_derived * total));
          err_paper = std::max(err_paper, std::abs(e - q.q_paper * total));
        }
      }
      worst = std::max(worst, err);
      worst_paper = std::max(worst_paper, err_paper);
      rows.push_back({std::to_string(n), format_number(p), csv_number(q.q_derived), csv_number(q.q_paper),
                      csv_number(err), csv_number(err_paper)});
    }
  }
  res.assertions.push_back({"lemma3.enumeration_matches_q_derived", worst <= 1e-12 ? "pass" : "fail", worst,
                            0.0, 1e-12, true});
  res.assertions.push_back({"lemma3.exponent_n_discrepancy", "info", worst_paper, 0.0, 1e-12, false});
  const fs::path f = dir / "lemma3.csv";
  write_rows(f, "n,p,q_derived,q_exponent_n,max_abs_error_q_derived,max_abs_error_q_exponent_n", rows);
  res.csv_files.push_back(f);
}

inline void run_lemma7_grid(const fs::path& dir, ExperimentResult& res) {
  std::vector<std::vector<std::string>> rows;
  std::size_t violations = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (int ia = 1; ia <= 20; ++ia)
    for (int ib = 1; ib <= 20; ++ib)
      for (int ix = 1; ix <= 20; ++ix) {
        const double a = 0.05 * ia, b = 0.05 * ib, x = 0.05 * ix;
        const auto r = lemma7_check(a, b, x);
        if (!r.holds) ++violations;
        worst_margin = std::min(worst_margin, b - r.g);
        rows.push_back({csv_number(a), csv_number(b), csv_number(x), csv_number(r.g), r.holds ? "1" : "0"});
      }
  res.assertions.push_back({"lemma7.grid", violations == 0 ? "pass" : "fail", static_cast<double>(violations),
                            0.0, 0.0, true});
  res.assertions.push_back({"lemma7.grid_min_margin", "info", worst_margin, 0.0, 0.0, false});
  for (double b : {0.1, 0.5, 1.0}) {
    const auto r = lemma7_check(1.0, b, 1e-8);
    const double gap = std::abs(r.g - b);
    res.assertions.push_back({"lemma7.limit.b_" + format_number(b), gap <= 1e-6 ? "pass" : "fail", gap, 0.0,
                              1e-6, true});
  }
  const fs::path f = dir / "lemma7_grid.csv";
  write_rows(f, "a,b,x,g,holds", rows);
  res.csv_files.push_back(f);
}

/// Central differences of the sampled global utility.
template <Objective M>
std::vector<double> finite_difference_gradient(const M& m, std::span<const double> a, const EnvState& s,
                                               double h) {
  std::vector<double> x(a.begin(), a.end()), g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    x[i] = a[i] + h;
    const double up = m.global_utility(x, s);
    x[i] = a[i] - h;
    const double down = m.global_utility(x, s);
    x[i] = a[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline void run_gradient_check(const ExperimentSpec& spec, const fs::path& dir, ExperimentResult& res) {
  std::vector<std::vector<std::string>> rows;
  auto check_model = [&](const auto& model, const std::string& name, double lo, double hi) {
    const std::size_t n = model.n_nodes();
    SplitMix64 rng(mix64(spec.seed ^ (n * 977) ^ std::hash<std::string>{}(name)));
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      std::vector<double> a(n);
      for (auto& v : a) v = lo + (hi - lo) * rng.uniform01();
      EnvState s;
      model.sample_state(rng, s);
      std::vector<double> g(n);
      model.exact_sample_gradient(a, s, g);
      const auto fd = finite_difference_gradient(model, a, s, 1e-5);
      double diff = 0.0, norm = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        diff += (g[i] - fd[i]) * (g[i] - fd[i]);
        norm += g[i] * g[i];
      }
      const double rel = std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
      worst = std::max(worst, rel);
      rows.push_back({name, std::to_string(n), std::to_string(t), csv_number(rel)});
    }
    res.assertions.push_back({"gradient." + name + ".n_" + std::to_string(n), worst <= 1e-5 ? "pass" : "fail",
                              worst, 0.0, 1e-5, true});
  };
  for (std::size_t n : {2u, 4u}) {
    PowerParams p;
    p.n_nodes = n;
    // interior points: 1% margin inside the action box
    const double span_pf = p.a_max - p.a_min;
    check_model(ProportionalFairPower(p), "power_pf", p.a_min + 0.01 * span_pf, p.a_max - 0.01 * span_pf);
    const double llo = std::log(p.a_min), lhi = std::log(p.a_max);
    check_model(SumRatePower(p), "power_sumrate", llo + 0.01 * (lhi - llo), lhi - 0.01 * (lhi - llo));
  }
  const fs::path f = dir / "gradient_check.csv";
  write_rows(f, "model,n,point,relative_error", rows);
  res.csv_files.push_back(f);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Runner

namespace detail {

template <Objective M>
void run_simulation(const ExperimentSpec& spec, const M& objective, const fs::path& dir,
                    const RunOptions& opts, ExperimentResult& res) {
  const std::size_t n = objective.n_nodes();
  std::optional<ActionVector> a_star = objective.optimum();
  if (!a_star) {
    const auto& sched = spec.studies.front().series.front().algo.schedule;
    a_star = empirical_optimum(objective, spec.objective, sched, spec.optimum_horizon, spec.optimum_replications,
                               spec.seed, opts);
  }

  std::optional<double> alpha5, alpha1;
  if constexpr (requires { objective.strong_concavity(); }) {
    alpha5 = objective.strong_concavity();
    alpha1 = objective.hessian_bound();
  }

  for (const auto& st : spec.studies) {
    const std::size_t reps = opts.replications_override.value_or(st.replications);
    for (const auto& se : st.series) {
      if (opts.log) *opts.log << "  " << st.id << "/" << se.label << ": " << reps << " x " << st.horizon << "\n";
      MonteCarloOptions mco;
      mco.jobs = opts.jobs;
      mco.record.stride = st.record_stride;
      SeriesOutcome out;
      out.study = st.id;
      out.label = se.label;
      out.algo = se.algo;
      out.mc = monte_carlo(se.algo, objective, st.horizon, reps, spec.seed, a_star, mco);

      const bool perturbation_family = se.algo.variant == Variant::dosp || se.algo.variant == Variant::dosp_incomplete;
      if (alpha5 && alpha1 && perturbation_family && reps * out.mc.ks.size() >= 1000) {
        const auto mom = moments(se.algo.perturbation);
        std::optional<double> q;
        if (se.algo.variant == Variant::dosp_incomplete) q = q_nonempty(*se.algo.exchange, n).q_derived;
        out.constants = make_rate_constants(n, *alpha1, mom.alpha2, mom.alpha3, *alpha5, estimate_M(out.mc), q);
        out.diagnostics = rate_diagnostics(se.algo.schedule, out.constants->A, se.algo.schedule.first_iteration());
        const auto& ks = out.mc.ks;
        const auto it = std::find(ks.begin(), ks.end(), out.diagnostics->K0);
        if (it != ks.end()) {
          const double D_K0 = out.mc.divergence->mean[static_cast<std::size_t>(it - ks.begin())];
          out.envelopes = theorem4_envelopes(*out.diagnostics, *out.constants, D_K0, se.algo.schedule);
        }
        out.theorem5_omega = spec.envelope_omega;
      }
      res.series.push_back(std::move(out));
    }
  }

  // CSV output, single threaded, after all reductions
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& s : res.series) {
    const std::string stem = (spec.studies.size() > 1 ? s.study + "_" : std::string()) + s.label;
    const auto& sched = s.algo.schedule;
    {
      const fs::path f = dir / (stem + "_divergence.csv");
      auto out = open_output(f);
      out << "k,D_k,stderr,envelope_theta,envelope_rho,envelope_theorem5,lemma5_floor\n";
      for (std::size_t j = 0; j < s.mc.ks.size(); ++j) {
        const Iteration k = s.mc.ks[j];
        const double th = s.envelopes ? s.envelopes->theta_envelope(sched, k) : nan;
        const double rh = s.envelopes ? s.envelopes->rho_envelope(sched, k) : nan;
        const double t5 = std::isnan(s.theorem5_omega) ? nan : theorem5_envelope(sched, s.theorem5_omega, k);
        const double floor =
            s.constants && s.diagnostics && k >= s.diagnostics->K0 ? lemma5_floor(*s.constants, sched, k) : nan;
        out << k << ',' << csv_number(s.mc.divergence->mean[j]) << ',' << csv_number(s.mc.divergence->std_error[j])
            << ',' << csv_number(th) << ',' << csv_number(rh) << ',' << csv_number(t5) << ',' << csv_number(floor)
            << '\n';
      }
      res.csv_files.push_back(f);
    }
    {
      const fs::path f = dir / (stem + "_utility.csv");
      auto out = open_output(f);
      out << "k,f_over_N,stderr";
      for (std::size_t i = 0; i < n; ++i) out << ",mean_a" << (i + 1);
      out << '\n';
      for (std::size_t j = 0; j < s.mc.ks.size(); ++j) {
        out << s.mc.ks[j] << ',' << csv_number(s.mc.utility.mean[j]) << ',' << csv_number(s.mc.utility.std_error[j]);
        for (double v : s.mc.mean_action[j]) out << ',' << csv_number(v);
        out << '\n';
      }
      res.csv_files.push_back(f);
    }
  }

  for (const auto& c : spec.checks) res.assertions.push_back(evaluate_check(c, res.series));

  // summary
  nlohmann::json& js = res.summary;
  js["a_star"] = *a_star;
  js["a_star_source"] = objective.optimum() ? "closed_form" : "exact_gradient_baseline_mean_final_iterate";
  if (!objective.optimum()) {
    js["a_star_run"] = {{"horizon", spec.optimum_horizon}, {"replications", spec.optimum_replications}};
    SplitMix64 rng(mix64(spec.seed ^ 0x0f0f0f0fULL));
    const auto f = sampled_objective(objective, *a_star, 100'000, rng);
    js["optimum_f_over_N"] = {{"value", f.value / static_cast<double>(n)},
                              {"stderr", f.std_error / static_cast<double>(n)}};
  }
  nlohmann::json series = nlohmann::json::array();
  for (const auto& s : res.series) {
    const auto& sc = s.algo.schedule;
    nlohmann::json e;
    e["study"] = s.study;
    e["label"] = s.label;
    e["variant"] = std::string(to_string(s.algo.variant));
    e["replications"] = s.mc.replications;
    e["schedule"] = {{"beta0", sc.beta0}, {"nu1", sc.nu1}, {"gamma0", sc.gamma0}, {"nu2", sc.nu2},
                     {"index_offset", sc.index_offset}};
    if (s.algo.exchange) {
      e["exchange_p"] = s.algo.exchange->p;
      const auto q = q_nonempty(*s.algo.exchange, n);
      e["q_derived"] = q.q_derived;
      e["q_exponent_n"] = q.q_paper;
    }
    e["final_f_over_N"] = json_number(s.mc.utility.mean.back());
    if (s.mc.divergence) e["final_D_k"] = json_number(s.mc.divergence->mean.back());
    e["mean_final_action"] = s.mc.mean_final_action;
    if (s.constants) {
      const auto& c = *s.constants;
      e["rate_constants"] = {{"A", c.A}, {"B", c.B}, {"C", c.C}, {"q", c.q},
                             {"variant", c.variant == InformationVariant::complete ? "complete" : "incomplete"},
                             {"M", c.M.value}, {"M_source", std::string(to_string(c.M.source))}};
      e["note"] = "C is an empirical estimate of the second-moment bound M; envelope comparisons are statistical";
      const auto t5 = theorem5_condition(sc, c.A);
      e["theorem5"] = {{"holds", t5.holds}, {"threshold", t5.threshold}, {"omega", s.theorem5_omega},
                       {"exponent", rate_exponent(sc)}};
    }
    if (s.diagnostics) {
      const auto& d = *s.diagnostics;
      e["diagnostics"] = {{"K0", d.K0}, {"epsilon1", json_number(d.chi_sup)},
                          {"epsilon2", json_number(d.beta_over_gamma3_sup)}, {"epsilon3", json_number(d.varpi_sup)},
                          {"epsilon4", json_number(d.sqrt_gamma3_over_beta_sup)}};
    }
    if (s.envelopes) {
      e["theorem4"] = {{"theta_applicable", s.envelopes->theta_applicable},
                       {"rho_applicable", s.envelopes->rho_applicable},
                       {"theta", json_number(s.envelopes->theta)},
                       {"rho", json_number(s.envelopes->rho)}};
    }
    series.push_back(e);
  }
  js["series"] = series;

  // incomplete/complete second-moment ratio, reported only
  for (const auto& s : res.series) {
    if (!s.constants || s.constants->variant != InformationVariant::incomplete) continue;
    for (const auto& t : res.series)
      if (t.constants && t.constants->variant == InformationVariant::complete && t.study == s.study)
        js["M_incomplete_over_complete"][s.label] = s.constants->M.value / t.constants->M.value;
  }
}

} // namespace detail

inline ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& opts = {}) {
  const auto problems = validate_spec(spec, false);
  if (!problems.empty()) {
    std::string msg = spec.name + ": invalid experiment";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  ExperimentResult res;
  res.name = spec.name;
  const fs::path dir = opts.out_dir / spec.name;
  fs::create_directories(dir);
  if (opts.log) *opts.log << spec.name << "\n";

  switch (spec.kind) {
  case ExperimentKind::simulation:
    std::visit([&](const auto& m) { detail::run_simulation(spec, m, dir, opts, res); },
               make_objective(spec.objective));
    break;
  case ExperimentKind::bias_check: detail::run_bias_check(spec, dir, res); break;
  case ExperimentKind::lemma3_check: detail::run_lemma3_check(spec, dir, res); break;
  case ExperimentKind::lemma7_grid: detail::run_lemma7_grid(dir, res); break;
  case ExperimentKind::gradient_check: detail::run_gradient_check(spec, dir, res); break;
  }

  nlohmann::json& js = res.summary;
  js["experiment"] = spec.name;
  js["seed"] = spec.seed;
  nlohmann::json asserts = nlohmann::json::array();
  for (const auto& a : res.assertions)
    asserts.push_back({{"id", a.id}, {"status", a.status}, {"measured", detail::json_number(a.measured)},
                       {"bound", detail::json_number(a.bound)}, {"tolerance", detail::json_number(a.tolerance)}});
  js["assertions"] = asserts;
  res.summary_file = dir / "summary.json";
  auto out = detail::open_output(res.summary_file);
  out << js.dump(2) << "\n";
  return res;
}

/// Resolves a built-in name or a config path.
inline ExperimentSpec load_experiment(const std::string& name_or_path) {
  if (is_builtin(name_or_path)) return builtin_spec(name_or_path);
  if (fs::exists(name_or_path)) return spec_from_config(Config::load(name_or_path));
  throw ConfigError("unknown experiment '" + name_or_path + "' (not a file); valid names: " + builtin_name_list());
}

} // namespace dosp
