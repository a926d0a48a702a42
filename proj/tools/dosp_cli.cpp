// dosp: run, validate and list distributed stochastic-perturbation experiments.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dosp/dosp.hpp"

namespace {

int cmd_run(const std::string& target, std::optional<std::uint64_t> seed, unsigned jobs, bool check,
            const std::string& out, bool allow_invalid, std::optional<std::size_t> replications) {
  dosp::ExperimentSpec spec = dosp::load_experiment(target);
  if (seed) spec.seed = *seed;
  if (allow_invalid) spec.allow_invalid_schedule = true;

  dosp::RunOptions opts;
  opts.out_dir = out;
  opts.jobs = jobs;
  opts.log = &std::cerr;
  opts.replications_override = replications;
  const auto res = dosp::run_experiment(spec, opts);

  for (const auto& f : res.csv_files) std::cout << "wrote " << f.string() << "\n";
  std::cout << "wrote " << res.summary_file.string() << "\n";
  for (const auto& a : res.assertions)
    std::printf("%-4s %s measured=%.6g bound=%.6g tolerance=%.3g\n", a.status.c_str(), a.id.c_str(),
                a.measured, a.bound, a.tolerance);
  if (check && !res.all_hard_passed()) {
    std::cerr << "one or more assertions failed\n";
    return 3;
  }
  return 0;
}

int cmd_validate(const std::string& target, bool allow_invalid) {
  const dosp::ExperimentSpec spec = dosp::load_experiment(target);
  const auto problems = dosp::validate_spec(spec, allow_invalid);
  std::size_t series = 0;
  for (const auto& st : spec.studies) series += st.series.size();
  if (problems.empty()) {
    std::cout << spec.name << ": ok (" << series << " series)\n";
    return 0;
  }
  for (const auto& p : problems) std::cout << spec.name << ": " << p << "\n";
  return 2;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed stochastic-perturbation optimization experiments"};
  app.require_subcommand(1);

  std::string target;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replications;
  unsigned jobs = 0;
  bool check = false, allow_invalid = false;
  std::string out = "results";

  auto* run = app.add_subcommand("run", "Run a built-in experiment or a config file");
  run->add_option("experiment", target, "Built-in name or config path")->required();
  run->add_option("--seed", seed, "Master seed");
  run->add_option("--jobs", jobs, "Worker threads (0: all cores)");
  run->add_flag("--check", check, "Exit nonzero when a hard assertion fails");
  run->add_option("--out", out, "Output directory");
  run->add_option("--replications", replications, "Override replication counts");
  run->add_flag("--allow-invalid-schedule", allow_invalid, "Accept schedules failing the step-size conditions");

  auto* validate = app.add_subcommand("validate", "Validate a config file or built-in name");
  validate->add_option("path", target, "Config path or built-in name")->required();
  validate->add_flag("--allow-invalid-schedule", allow_invalid, "Accept schedules failing the step-size conditions");

  app.add_subcommand("list", "List built-in experiments");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(target, seed, jobs, check, out, allow_invalid, replications);
    if (*validate) return cmd_validate(target, allow_invalid);
    for (const auto& n : dosp::builtin_names()) std::cout << n << "\n";
    return 0;
  } catch (const dosp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
