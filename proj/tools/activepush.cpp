// Command-line entry point for the experiments and the oracle suites.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "activepush/experiment.hpp"
#include "activepush/verification.hpp"

namespace {

using namespace activepush;

constexpr int kExitCheckFailed = 2;

struct RunOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool check = false;
  bool timing = false;
  bool quiet = false;
};

ExperimentConfig resolve(const RunOptions& opt, ExperimentKind expected) {
  ExperimentConfig cfg = load_config(opt.config);
  if (cfg.kind != expected) {
    throw std::invalid_argument(opt.config + " describes a " + to_string(cfg.kind) + " experiment, not " +
                                to_string(expected));
  }
  if (opt.seed) cfg.seeds = {*opt.seed};
  if (!opt.out.empty()) cfg.output = opt.out;
  if (opt.timing) cfg.record_timing = true;
  return cfg;
}

int report(const CheckOutcome& outcome, const std::string& name) {
  for (const auto& line : outcome.details) std::cout << "  " << line << "\n";
  std::cout << (outcome.passed ? "PASS " : "FAIL ") << name << "\n";
  return outcome.passed ? 0 : kExitCheckFailed;
}

ProgressFn progress_printer(bool quiet) {
  if (quiet) return {};
  return [](const std::string& msg) { std::cerr << msg << std::endl; };
}

int run_skill(const RunOptions& opt) {
  const ExperimentConfig cfg = resolve(opt, ExperimentKind::kSkillLearning);
  const auto records = run_skill_learning(cfg, progress_printer(opt.quiet));
  write_outputs(cfg.output, cfg, records);
  std::cout << "wrote " << (cfg.output / "records.csv").string() << "\n";
  return opt.check ? report(check_learning_trend(records), "learning-curve trend") : 0;
}

int run_sweep(const RunOptions& opt) {
  const ExperimentConfig cfg = resolve(opt, ExperimentKind::kPlanningSweep);
  const PlanningOutputs out = run_planning_sweep(cfg, progress_printer(opt.quiet));
  write_outputs(cfg.output, cfg, out.records, out.benchmarks);
  std::cout << "wrote " << (cfg.output / "records.csv").string() << "\n";
  return opt.check ? report(check_sweep_trend(out.records), "planning sweep trend") : 0;
}

int run_active(const RunOptions& opt) {
  const ExperimentConfig cfg = resolve(opt, ExperimentKind::kActivePlanning);
  const PlanningOutputs out = run_active_planning(cfg, progress_printer(opt.quiet));
  write_outputs(cfg.output, cfg, out.records, out.benchmarks);
  std::cout << "wrote " << (cfg.output / "records.csv").string() << "\n";
  return opt.check ? report(check_active_improvement(out.records), "active planning improvement") : 0;
}

int run_verify(bool quick) {
  bool all = true;
  for (const auto& suite : oracle_suites()) {
    const SuiteResult r = suite.run(quick);
    all = all && r.passed;
    std::cout << (r.passed ? "PASS " : "FAIL ") << suite.name << " (" << detail::fmt(r.seconds, 3) << " s): " << r.detail
              << "\n";
  }
  return all ? 0 : kExitCheckFailed;
}

void add_run_options(CLI::App* cmd, RunOptions& opt) {
  cmd->add_option("--config", opt.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", opt.seed, "Run a single seed instead of the configured list");
  cmd->add_option("--out", opt.out, "Output directory");
  cmd->add_flag("--check", opt.check, "Evaluate the acceptance check on the results; exit 2 on failure");
  cmd->add_flag("--quiet", opt.quiet, "No progress messages");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual push-dynamics learning, active learning and uncertainty-aware planning"};
  app.require_subcommand(1);

  RunOptions skill, sweep, active;
  auto* skill_cmd = app.add_subcommand("skill-learn", "Validation RMSE per acquisition round");
  add_run_options(skill_cmd, skill);
  auto* sweep_cmd = app.add_subcommand("plan-sweep", "Planning success against training-set size");
  add_run_options(sweep_cmd, sweep);
  sweep_cmd->add_flag("--timing", sweep.timing, "Record plan_time_ms (makes benchmark files machine dependent)");
  auto* active_cmd = app.add_subcommand("active-plan", "Active against random control sampling");
  add_run_options(active_cmd, active);
  active_cmd->add_flag("--timing", active.timing, "Record plan_time_ms (makes benchmark files machine dependent)");
  bool quick = false;
  auto* verify_cmd = app.add_subcommand("verify", "Run the oracle and property suites");
  verify_cmd->add_flag("--quick", quick, "Smaller sample counts");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*skill_cmd) return run_skill(skill);
    if (*sweep_cmd) return run_sweep(sweep);
    if (*active_cmd) return run_active(active);
    if (*verify_cmd) return run_verify(quick);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
