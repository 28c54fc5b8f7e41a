/// @file
/// Config-driven experiment runners: skill-learning curves, planning success
/// against training-set size, and active against random control sampling,
/// plus the trend checks evaluated on their records.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "activepush/active_learning.hpp"
#include "activepush/io.hpp"
#include "activepush/planner.hpp"
#include "activepush/push_simulator.hpp"
#include "activepush/random.hpp"
#include "activepush/residual_model.hpp"

namespace activepush {

// ---------------------------------------------------------------- catalogue

/// Synthetic object: footprint and true friction ratio of the ground truth,
/// plus its observation noise.
struct ObjectEntry {
  std::string name;
  ObjectSpec spec;
  std::array<double, 3> noise_std = {1e-3, 1e-3, 1e-2};
};

inline const std::vector<ObjectEntry>& object_catalogue() {
  static const std::vector<ObjectEntry> objects = {
      {"cracker_box", {0.080, 0.105, 0.03}, {1e-3, 1e-3, 1e-2}},
      {"mug", {0.045, 0.045, 0.05}, {1e-3, 1e-3, 1e-2}},
      {"mustard_bottle", {0.048, 0.030, 0.08}, {1e-3, 1e-3, 1e-2}},
      {"banana", {0.090, 0.025, 0.12}, {1e-3, 1e-3, 1e-2}},
  };
  return objects;
}

inline const ObjectEntry& find_object(const std::string& name) {
  for (const auto& o : object_catalogue()) {
    if (o.name == name) return o;
  }
  throw std::invalid_argument("unknown object '" + name + "'");
}

/// FNV-1a, a stable stream id for names.
inline std::uint64_t name_stream(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------- methods

enum class Method { kPurePhysics, kMlpRandom, kResidualRandom, kMlpActive, kResidualActive };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kPurePhysics: return "pure_physics";
    case Method::kMlpRandom: return "mlp_random";
    case Method::kResidualRandom: return "residual_random";
    case Method::kMlpActive: return "mlp_active";
    case Method::kResidualActive: return "residual_active";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : {Method::kPurePhysics, Method::kMlpRandom, Method::kResidualRandom, Method::kMlpActive,
                   Method::kResidualActive}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown method '" + s + "'");
}

inline ModelKind model_kind(Method m) {
  switch (m) {
    case Method::kPurePhysics: return ModelKind::kPhysics;
    case Method::kMlpRandom:
    case Method::kMlpActive: return ModelKind::kPlain;
    default: return ModelKind::kResidual;
  }
}

inline Strategy acquisition_strategy(Method m) {
  return m == Method::kMlpActive || m == Method::kResidualActive ? Strategy::kBait : Strategy::kRandom;
}

// ---------------------------------------------------------------- config

enum class ExperimentKind { kSkillLearning, kPlanningSweep, kActivePlanning };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kSkillLearning: return "skill_learning";
    case ExperimentKind::kPlanningSweep: return "planning_sweep";
    case ExperimentKind::kActivePlanning: return "active_planning";
  }
  return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  for (ExperimentKind k : {ExperimentKind::kSkillLearning, ExperimentKind::kPlanningSweep,
                           ExperimentKind::kActivePlanning}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown experiment kind '" + s + "'");
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kSkillLearning;
  std::vector<std::string> objects = {"cracker_box", "mug", "mustard_bottle", "banana"};
  std::vector<Method> methods = {Method::kPurePhysics, Method::kMlpRandom, Method::kResidualRandom,
                                 Method::kMlpActive, Method::kResidualActive};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

  // Skill learning.
  std::size_t pool_size = 1000;
  std::size_t validation_size = 800;
  AcquisitionConfig acquisition;
  TrainConfig training;
  Activation activation = Activation::kTanh;
  double max_distance = kDefaultMaxPushDistance;
  /// Simulator settings; true_c and noise come from the object.
  GroundTruthConfig ground_truth;

  // Planning.
  SSTConfig planner;
  ProblemSetConfig problem_set;
  std::size_t num_problems = 100;
  std::uint64_t problem_seed = 0;
  /// Planning sweep: training-set sizes, each a multiple of the batch size.
  std::vector<std::size_t> dataset_sizes = {0, 20, 40, 60, 80, 100};
  /// Active planning: training-set size of the planning model.
  std::size_t dataset_size = 100;
  std::vector<std::string> samplers = {"random", "active"};
  /// Optional problem list (JSON array); replaces the generated problems.
  std::string problems_file;
  /// Directory of model checkpoints, reused when present.
  std::string checkpoint_dir;

  std::filesystem::path output = "results";
  bool record_timing = false;
};

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.seeds.empty()) throw std::invalid_argument("config: need at least one seed");
  if (cfg.methods.empty()) throw std::invalid_argument("config: need at least one method");
  if (cfg.objects.empty()) throw std::invalid_argument("config: need at least one object");
  for (const auto& o : cfg.objects) find_object(o);
  if (cfg.acquisition.batch < 1) throw std::invalid_argument("config: acquisition batch must be >= 1");
  if (cfg.validation_size < 1 || cfg.pool_size < 1) throw std::invalid_argument("config: empty pool or validation set");
  validate(cfg.training);
  validate(cfg.planner);
  if (cfg.kind != ExperimentKind::kSkillLearning && cfg.num_problems < 1 && cfg.problems_file.empty()) {
    throw std::invalid_argument("config: need at least one planning problem");
  }
  for (std::size_t n : cfg.dataset_sizes) {
    if (n % cfg.acquisition.batch != 0) throw std::invalid_argument("config: dataset sizes must be multiples of the batch");
  }
  if (cfg.dataset_size % cfg.acquisition.batch != 0) {
    throw std::invalid_argument("config: dataset_size must be a multiple of the batch");
  }
  for (const auto& s : cfg.samplers) {
    if (s != "random" && s != "active") throw std::invalid_argument("config: unknown sampler '" + s + "'");
  }
}

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::read_opt;
  detail::reject_unknown_keys(j,
                              {"experiment", "objects", "methods", "seeds", "pool_size", "validation_size",
                               "acquisition", "training", "model", "ground_truth", "planner", "problems", "output",
                               "checkpoint_dir", "record_timing"},
                              "config");
  ExperimentConfig cfg;
  cfg.kind = experiment_kind_from_string(j.at("experiment").get<std::string>());
  read_opt(j, "objects", cfg.objects);
  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : j.at("methods")) cfg.methods.push_back(method_from_string(m.get<std::string>()));
  }
  read_opt(j, "seeds", cfg.seeds);
  read_opt(j, "pool_size", cfg.pool_size);
  read_opt(j, "validation_size", cfg.validation_size);
  if (j.contains("acquisition")) {
    const json& a = j.at("acquisition");
    detail::reject_unknown_keys(a, {"batch", "rounds", "sigma_d", "sketch_dim", "sketch_seed"}, "acquisition");
    read_opt(a, "batch", cfg.acquisition.batch);
    read_opt(a, "rounds", cfg.acquisition.rounds);
    read_opt(a, "sigma_d", cfg.acquisition.sigma_d);
    read_opt(a, "sketch_dim", cfg.acquisition.sketch.sketch_dim);
    read_opt(a, "sketch_seed", cfg.acquisition.sketch.seed);
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    detail::reject_unknown_keys(t,
                                {"batch_size", "epochs", "learning_rate", "plateau_factor", "plateau_patience",
                                 "plateau_threshold", "min_learning_rate", "stop_on_convergence",
                                 "rotation_weight"},
                                "training");
    read_opt(t, "batch_size", cfg.training.batch_size);
    read_opt(t, "epochs", cfg.training.epochs);
    read_opt(t, "learning_rate", cfg.training.learning_rate);
    read_opt(t, "plateau_factor", cfg.training.plateau_factor);
    read_opt(t, "plateau_patience", cfg.training.plateau_patience);
    read_opt(t, "plateau_threshold", cfg.training.plateau_threshold);
    read_opt(t, "min_learning_rate", cfg.training.min_learning_rate);
    read_opt(t, "stop_on_convergence", cfg.training.stop_on_convergence);
    read_opt(t, "rotation_weight", cfg.training.weights.rotation);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    detail::reject_unknown_keys(m, {"activation", "max_distance"}, "model");
    if (m.contains("activation")) cfg.activation = activation_from_string(m.at("activation").get<std::string>());
    read_opt(m, "max_distance", cfg.max_distance);
  }
  if (j.contains("ground_truth")) {
    const json& g = j.at("ground_truth");
    detail::reject_unknown_keys(g, {"step_length", "slip_enabled", "mu_contact"}, "ground_truth");
    read_opt(g, "step_length", cfg.ground_truth.step_length);
    read_opt(g, "slip_enabled", cfg.ground_truth.slip_enabled);
    read_opt(g, "mu_contact", cfg.ground_truth.mu_contact);
  }
  if (j.contains("planner")) {
    const json& p = j.at("planner");
    detail::reject_unknown_keys(p,
                                {"selection_radius", "pruning_radius", "max_iterations", "time_limit_s",
                                 "candidate_batch", "goal_bias", "angle_weight"},
                                "planner");
    read_opt(p, "selection_radius", cfg.planner.selection_radius);
    read_opt(p, "pruning_radius", cfg.planner.pruning_radius);
    read_opt(p, "max_iterations", cfg.planner.max_iterations);
    read_opt(p, "time_limit_s", cfg.planner.time_limit_s);
    read_opt(p, "candidate_batch", cfg.planner.candidate_batch);
    read_opt(p, "goal_bias", cfg.planner.goal_bias);
    read_opt(p, "angle_weight", cfg.planner.angle_weight);
  }
  if (j.contains("problems")) {
    const json& p = j.at("problems");
    detail::reject_unknown_keys(p,
                                {"count", "seed", "overhang_min", "dataset_sizes", "dataset_size", "samplers",
                                 "file"},
                                "problems");
    read_opt(p, "count", cfg.num_problems);
    read_opt(p, "seed", cfg.problem_seed);
    read_opt(p, "overhang_min", cfg.problem_set.overhang_min);
    read_opt(p, "dataset_sizes", cfg.dataset_sizes);
    read_opt(p, "dataset_size", cfg.dataset_size);
    read_opt(p, "samplers", cfg.samplers);
    read_opt(p, "file", cfg.problems_file);
  }
  if (j.contains("output")) cfg.output = j.at("output").get<std::string>();
  read_opt(j, "checkpoint_dir", cfg.checkpoint_dir);
  read_opt(j, "record_timing", cfg.record_timing);
  validate(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- learning

/// Pool, validation set and labelling stream of one (object, seed) cell,
/// shared by every method so that methods are compared on matched data.
struct LearningCell {
  const ObjectEntry* object = nullptr;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  GroundTruthConfig ground_truth;
  std::vector<PushParams> pool;
  std::vector<Interaction> validation;
};

inline LearningCell make_learning_cell(const ExperimentConfig& cfg, const ObjectEntry& obj, std::uint64_t seed) {
  LearningCell cell;
  cell.object = &obj;
  cell.seed = seed;
  cell.stream = derive_seed(seed, name_stream(obj.name));
  cell.ground_truth = cfg.ground_truth;
  cell.ground_truth.true_c = obj.spec.friction_ratio_c;
  cell.ground_truth.noise_std = obj.noise_std;
  Rng pool_rng(derive_seed(cell.stream, 1)), val_rng(derive_seed(cell.stream, 2));
  cell.pool = make_pool(cfg.pool_size, obj.spec, pool_rng, cfg.max_distance);
  GroundTruthConfig val_gt = cell.ground_truth;
  val_gt.seed = derive_seed(cell.stream, 3);
  cell.validation = batch_simulate(make_pool(cfg.validation_size, obj.spec, val_rng, cfg.max_distance), obj.spec, val_gt);
  return cell;
}

inline Labeler make_labeler(const LearningCell& cell) {
  const ObjectSpec spec = cell.object->spec;
  const GroundTruthConfig base = cell.ground_truth;
  const std::uint64_t stream = cell.stream;
  return [spec, base, stream](const std::vector<PushParams>& batch, std::size_t round) {
    GroundTruthConfig gt = base;
    gt.seed = derive_seed(stream, 100 + round);
    return batch_simulate(batch, spec, gt);
  };
}

/// Checkpoints after each round of one method on one cell; entry r holds
/// the model after r rounds.
using LearningCurve = std::vector<Checkpoint>;

inline LearningCurve run_learning_cell(const ExperimentConfig& cfg, const LearningCell& cell, Method method,
                                       std::size_t rounds) {
  const ObjectSpec& spec = cell.object->spec;
  const DynamicsModel initial(model_kind(method), spec, derive_seed(cell.stream, 4), cfg.activation, cfg.max_distance);
  LearningCurve curve;
  if (method == Method::kPurePhysics) {
    curve.assign(rounds + 1, Checkpoint{initial, {}});
    return curve;
  }
  TrainConfig train = cfg.training;
  train.seed = derive_seed(cell.stream, 5);
  AcquisitionConfig acq = cfg.acquisition;
  acq.rounds = rounds;
  acq.strategy = acquisition_strategy(method);
  acq.seed = derive_seed(cell.stream, 6);
  const LearningResult result = active_learning_loop(initial, make_labeler(cell), train, acq, cell.pool, cell.validation);
  for (std::size_t r = 0; r < result.models.size(); ++r) {
    const std::size_t n = r == 0 ? 0 : result.metrics[r - 1].n_train;
    curve.push_back({result.models[r], std::vector<Interaction>(result.train_data.begin(),
                                                                result.train_data.begin() + static_cast<std::ptrdiff_t>(n))});
  }
  return curve;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, const std::string& object, Method m,
                                             std::uint64_t seed, std::size_t round) {
  return dir / object / to_string(m) / ("seed" + std::to_string(seed) + "_round" + std::to_string(round) + ".json");
}

/// Model after `round` rounds, loaded from the checkpoint directory when
/// available and otherwise learned (and saved there if a directory is set).
inline Checkpoint obtain_checkpoint(const ExperimentConfig& cfg, const ObjectEntry& obj, Method method,
                                    std::uint64_t seed, std::size_t round) {
  if (!cfg.checkpoint_dir.empty()) {
    const auto path = checkpoint_path(cfg.checkpoint_dir, obj.name, method, seed, round);
    if (std::filesystem::exists(path)) return load_checkpoint(path);
  }
  const LearningCell cell = make_learning_cell(cfg, obj, seed);
  const LearningCurve curve = run_learning_cell(cfg, cell, method, round);
  if (curve.size() <= round) throw std::runtime_error("pool too small for the requested training-set size");
  if (!cfg.checkpoint_dir.empty()) {
    for (std::size_t r = 0; r < curve.size(); ++r) {
      save_checkpoint(checkpoint_path(cfg.checkpoint_dir, obj.name, method, seed, r), curve[r]);
    }
  }
  return curve[round];
}

using ProgressFn = std::function<void(const std::string&)>;

/// Validation RMSE per round for every method x object x seed. Round 0 is
/// the untrained model; pure_physics is evaluated once and repeated.
inline std::vector<RunRecord> run_skill_learning(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
  std::vector<RunRecord> records;
  const std::size_t rounds = cfg.acquisition.rounds;
  for (const auto& object_name : cfg.objects) {
    const ObjectEntry& obj = find_object(object_name);
    for (std::uint64_t seed : cfg.seeds) {
      const LearningCell cell = make_learning_cell(cfg, obj, seed);
      for (Method method : cfg.methods) {
        const LearningCurve curve = run_learning_cell(cfg, cell, method, rounds);
        const double physics_rmse = method == Method::kPurePhysics ? curve.front().model.rmse(cell.validation) : 0.0;
        for (std::size_t r = 0; r < curve.size(); ++r) {
          RunRecord rec;
          rec.experiment = to_string(cfg.kind);
          rec.method = to_string(method);
          rec.object = obj.name;
          rec.seed = seed;
          rec.round = r;
          rec.n_train = method == Method::kPurePhysics ? r * cfg.acquisition.batch : curve[r].train_data.size();
          rec.metric = "validation_rmse";
          rec.value = method == Method::kPurePhysics ? physics_rmse : curve[r].model.rmse(cell.validation);
          records.push_back(rec);
          if (!cfg.checkpoint_dir.empty()) {
            save_checkpoint(checkpoint_path(cfg.checkpoint_dir, obj.name, method, seed, r), curve[r]);
          }
        }
        if (progress) {
          std::ostringstream msg;
          msg << obj.name << " seed " << seed << " " << to_string(method) << ": final rmse "
              << format_double(records.back().value);
          progress(msg.str());
        }
      }
    }
  }
  return records;
}

// ---------------------------------------------------------------- planning

inline std::vector<PlanningProblem> planning_problems(const ExperimentConfig& cfg, const ObjectEntry& obj) {
  if (!cfg.problems_file.empty()) {
    std::vector<PlanningProblem> out;
    for (const auto& p : read_json_file(cfg.problems_file)) out.push_back(problem_from_json(p));
    return out;
  }
  ProblemSetConfig set = cfg.problem_set;
  return make_problems(cfg.num_problems, obj.spec, set, cfg.problem_seed);
}

/// Kernel conditioned on the checkpoint's training inputs; empty for the
/// physics model or an empty training set.
inline std::optional<KernelState> planning_kernel(const Checkpoint& c, double sigma_d, const SketchConfig& sketch) {
  if (c.model.kind() == ModelKind::kPhysics || c.train_data.empty()) return std::nullopt;
  std::vector<PushParams> ps;
  for (const auto& d : c.train_data) ps.push_back(d.params);
  return KernelState(c.model.ntk_features(ps, sketch), sigma_d);
}

/// Plans every problem with one sampler and executes the plan open loop on
/// the ground truth. Planner and execution seeds depend only on the problem,
/// so samplers are compared on matched seeds.
inline std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& cfg, const ObjectEntry& obj,
                                               const std::vector<PlanningProblem>& problems, const Checkpoint& c,
                                               const std::optional<KernelState>& kernel, const std::string& sampler_name) {
  std::vector<BenchmarkRow> rows;
  GroundTruthConfig gt = cfg.ground_truth;
  gt.true_c = obj.spec.friction_ratio_c;
  gt.noise_std = obj.noise_std;
  for (const auto& prob : problems) {
    SSTConfig sst = cfg.planner;
    sst.seed = derive_seed(cfg.problem_seed, 1000 + static_cast<std::uint64_t>(prob.id));
    std::unique_ptr<ControlSampler> sampler;
    if (sampler_name == "active") {
      if (!kernel) throw std::invalid_argument("active sampling needs a learned model with training data");
      sampler = std::make_unique<ActiveControlSampler>(c.model, *kernel, cfg.planner.candidate_batch);
    } else {
      sampler = std::make_unique<RandomControlSampler>(c.model.prior_object(), c.model.max_distance());
    }
    const auto t0 = std::chrono::steady_clock::now();
    const PlanResult result = sst_plan(prob, c.model, *sampler, sst);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    BenchmarkRow row;
    row.problem_id = prob.id;
    row.sampler = sampler_name;
    row.solved = result.solved;
    row.iterations = result.iterations;
    row.plan_time_ms = cfg.record_timing ? ms : -1.0;
    if (result.solved) {
      gt.seed = derive_seed(cfg.problem_seed, 2000 + static_cast<std::uint64_t>(prob.id));
      const ExecutionResult exec = execute_plan(result.plan, prob, gt);
      row.success = exec.success;
      row.cost = result.plan.cost();
      row.tracking_error = exec.tracking_error;
      row.plan = result.plan;
    }
    rows.push_back(row);
  }
  return rows;
}

struct BenchmarkSummary {
  std::size_t problems = 0;
  std::size_t solved = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double success_se = 0.0;
  double mean_tracking_error = 0.0;  ///< over solved problems
  double mean_cost = 0.0;            ///< over solved problems
};

inline BenchmarkSummary summarize(const std::vector<BenchmarkRow>& rows) {
  BenchmarkSummary s;
  s.problems = rows.size();
  double err = 0.0, cost = 0.0;
  for (const auto& r : rows) {
    if (!r.solved) continue;
    ++s.solved;
    s.successes += r.success;
    err += r.tracking_error;
    cost += static_cast<double>(r.cost);
  }
  if (s.problems > 0) {
    const auto n = static_cast<double>(s.problems);
    s.success_rate = static_cast<double>(s.successes) / n;
    s.success_se = std::sqrt(s.success_rate * (1.0 - s.success_rate) / n);
  }
  if (s.solved > 0) {
    s.mean_tracking_error = err / static_cast<double>(s.solved);
    s.mean_cost = cost / static_cast<double>(s.solved);
  }
  return s;
}

inline void append_summary(std::vector<RunRecord>& out, RunRecord base, const BenchmarkSummary& s) {
  const std::pair<const char*, double> metrics[] = {
      {"success_rate", s.success_rate},
      {"success_se", s.success_se},
      {"solved_rate", s.problems ? static_cast<double>(s.solved) / static_cast<double>(s.problems) : 0.0},
      {"tracking_error", s.mean_tracking_error},
      {"mean_cost", s.mean_cost},
      {"problems", static_cast<double>(s.problems)},
  };
  for (const auto& [name, value] : metrics) {
    base.metric = name;
    base.value = value;
    out.push_back(base);
  }
}

inline json plans_to_json(const std::vector<BenchmarkRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json j = {{"problem_id", r.problem_id}, {"sampler", r.sampler}, {"solved", r.solved}, {"success", r.success}};
    if (r.solved) j["plan"] = to_json(r.plan);
    out.push_back(j);
  }
  return out;
}

/// Everything a planning run writes besides the records.
struct PlanningOutputs {
  std::vector<RunRecord> records;
  /// file name (relative to the output directory) -> benchmark rows
  std::vector<std::pair<std::string, std::vector<BenchmarkRow>>> benchmarks;
};

/// Success and tracking error against training-set size, random sampler.
inline PlanningOutputs run_planning_sweep(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
  PlanningOutputs out;
  for (const auto& object_name : cfg.objects) {
    const ObjectEntry& obj = find_object(object_name);
    const auto problems = planning_problems(cfg, obj);
    for (Method method : cfg.methods) {
      for (std::uint64_t seed : cfg.seeds) {
        const std::size_t max_round = *std::max_element(cfg.dataset_sizes.begin(), cfg.dataset_sizes.end()) /
                                      cfg.acquisition.batch;
        // One learning run covers every dataset size.
        LearningCurve curve;
        bool all_cached = !cfg.checkpoint_dir.empty();
        for (std::size_t n : cfg.dataset_sizes) {
          all_cached = all_cached && std::filesystem::exists(checkpoint_path(cfg.checkpoint_dir, obj.name, method, seed,
                                                                             n / cfg.acquisition.batch));
        }
        if (!all_cached) {
          const LearningCell cell = make_learning_cell(cfg, obj, seed);
          curve = run_learning_cell(cfg, cell, method, max_round);
          if (curve.size() <= max_round) throw std::runtime_error("pool too small for the requested dataset sizes");
          if (!cfg.checkpoint_dir.empty()) {
            for (std::size_t r = 0; r < curve.size(); ++r) {
              save_checkpoint(checkpoint_path(cfg.checkpoint_dir, obj.name, method, seed, r), curve[r]);
            }
          }
        }
        for (std::size_t n : cfg.dataset_sizes) {
          const std::size_t round = n / cfg.acquisition.batch;
          const Checkpoint c =
              all_cached ? load_checkpoint(checkpoint_path(cfg.checkpoint_dir, obj.name, method, seed, round)) : curve[round];
          const auto rows = run_benchmark(cfg, obj, problems, c, std::nullopt, "random");
          const BenchmarkSummary s = summarize(rows);
          RunRecord base;
          base.experiment = to_string(cfg.kind);
          base.method = to_string(method);
          base.object = obj.name;
          base.seed = seed;
          base.round = round;
          base.n_train = n;
          base.sampler = "random";
          append_summary(out.records, base, s);
          out.benchmarks.emplace_back("benchmark_" + obj.name + "_" + to_string(method) + "_seed" + std::to_string(seed) +
                                          "_n" + std::to_string(n) + ".csv",
                                      rows);
          if (progress) {
            std::ostringstream msg;
            msg << obj.name << " " << to_string(method) << " seed " << seed << " n=" << n << ": success "
                << s.successes << "/" << s.problems << ", tracking error " << format_double(s.mean_tracking_error);
            progress(msg.str());
          }
        }
      }
    }
  }
  return out;
}

/// The same problems under each configured sampler with one trained model.
inline PlanningOutputs run_active_planning(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
  PlanningOutputs out;
  const std::size_t round = cfg.dataset_size / cfg.acquisition.batch;
  for (const auto& object_name : cfg.objects) {
    const ObjectEntry& obj = find_object(object_name);
    const auto problems = planning_problems(cfg, obj);
    for (Method method : cfg.methods) {
      for (std::uint64_t seed : cfg.seeds) {
        const Checkpoint c = obtain_checkpoint(cfg, obj, method, seed, round);
        const auto kernel = planning_kernel(c, cfg.acquisition.sigma_d, cfg.acquisition.sketch);
        for (const auto& sampler : cfg.samplers) {
          const auto rows = run_benchmark(cfg, obj, problems, c, kernel, sampler);
          const BenchmarkSummary s = summarize(rows);
          RunRecord base;
          base.experiment = to_string(cfg.kind);
          base.method = to_string(method);
          base.object = obj.name;
          base.seed = seed;
          base.round = round;
          base.n_train = c.train_data.size();
          base.sampler = sampler;
          append_summary(out.records, base, s);
          out.benchmarks.emplace_back("benchmark_" + obj.name + "_" + to_string(method) + "_seed" + std::to_string(seed) +
                                          "_" + sampler + ".csv",
                                      rows);
          if (progress) {
            std::ostringstream msg;
            msg << obj.name << " " << to_string(method) << " seed " << seed << " sampler " << sampler << ": success "
                << s.successes << "/" << s.problems << ", tracking error " << format_double(s.mean_tracking_error)
                << ", mean cost " << format_double(s.mean_cost);
            progress(msg.str());
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- trend checks

struct CheckOutcome {
  bool passed = true;
  std::vector<std::string> details;

  void require(bool ok, const std::string& what) {
    passed = passed && ok;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
};

namespace detail {

/// Mean of `metric` over seeds, keyed by (object, method, round, sampler).
inline std::map<std::tuple<std::string, std::string, std::size_t, std::string>, double> seed_means(
    const std::vector<RunRecord>& records, const std::string& metric) {
  std::map<std::tuple<std::string, std::string, std::size_t, std::string>, std::pair<double, int>> acc;
  for (const auto& r : records) {
    if (r.metric != metric) continue;
    auto& a = acc[{r.object, r.method, r.round, r.sampler}];
    a.first += r.value;
    a.second += 1;
  }
  std::map<std::tuple<std::string, std::string, std::size_t, std::string>, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / v.second;
  return out;
}

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

}  // namespace detail

/// Learning-curve ranking: active residual at or below random residual from
/// round 2 on and at least 5% lower at the last round on >= 3 of 4 objects;
/// residual below plain at rounds 1-3 on >= 3 of 4 objects; every learned
/// method below pure physics at the last round.
inline CheckOutcome check_learning_trend(const std::vector<RunRecord>& records) {
  CheckOutcome out;
  const auto mean = detail::seed_means(records, "validation_rmse");
  std::set<std::string> objects;
  std::size_t last_round = 0;
  for (const auto& r : records) {
    objects.insert(r.object);
    last_round = std::max(last_round, r.round);
  }
  auto get = [&](const std::string& obj, const char* method, std::size_t round) -> std::optional<double> {
    const auto it = mean.find({obj, method, round, "none"});
    if (it == mean.end()) return std::nullopt;
    return it->second;
  };
  const std::size_t needed = objects.size() >= 4 ? objects.size() - 1 : objects.size();
  std::size_t improved = 0, residual_wins = 0;
  for (const auto& obj : objects) {
    bool dominates = true;
    std::ostringstream trace;
    for (std::size_t r = 2; r <= last_round; ++r) {
      const auto a = get(obj, "residual_active", r), b = get(obj, "residual_random", r);
      if (!a || !b) {
        dominates = false;
        trace << " r" << r << ":missing";
        continue;
      }
      trace << " r" << r << ":" << detail::fmt(*a) << "/" << detail::fmt(*b);
      dominates = dominates && *a <= *b;
    }
    out.require(dominates, "(a) " + obj + " residual_active <= residual_random for rounds >= 2 (active/random)" +
                               trace.str());
    const auto a = get(obj, "residual_active", last_round), b = get(obj, "residual_random", last_round);
    if (a && b && *a <= 0.95 * *b) ++improved;

    bool wins = true;
    std::ostringstream trace_b;
    for (std::size_t r = 1; r <= std::min<std::size_t>(3, last_round); ++r) {
      for (const auto& [res, plain] : {std::pair{"residual_random", "mlp_random"}, std::pair{"residual_active", "mlp_active"}}) {
        const auto x = get(obj, res, r), y = get(obj, plain, r);
        if (!x || !y) {
          wins = false;
          continue;
        }
        wins = wins && *x < *y;
        trace_b << " r" << r << ":" << detail::fmt(*x) << "/" << detail::fmt(*y);
      }
    }
    residual_wins += wins;
    out.details.push_back("     (b) " + obj + (wins ? " residual beats plain" : " residual does not beat plain") +
                          " at rounds 1-3 (residual/plain)" + trace_b.str());

    for (const char* m : {"mlp_random", "residual_random", "mlp_active", "residual_active"}) {
      const auto x = get(obj, m, last_round), phys = get(obj, "pure_physics", last_round);
      if (!x) continue;
      out.require(phys && *x < *phys, "(c) " + obj + " " + m + " beats pure_physics at round " +
                                          std::to_string(last_round) + ": " + detail::fmt(*x) + " < " +
                                          (phys ? detail::fmt(*phys) : std::string("missing")));
    }
  }
  out.require(improved >= needed, "(a) >= 5% improvement of residual_active at round " + std::to_string(last_round) +
                                      " on " + std::to_string(improved) + " of " + std::to_string(objects.size()) +
                                      " objects (need " + std::to_string(needed) + ")");
  out.require(residual_wins >= needed, "(b) residual beats plain at rounds 1-3 on " + std::to_string(residual_wins) +
                                           " of " + std::to_string(objects.size()) + " objects (need " +
                                           std::to_string(needed) + ")");
  return out;
}

/// Planning sweep: residual_active success nondecreasing in training-set size
/// up to one standard error of the difference, and residual_active at least
/// residual_random at the largest size.
inline CheckOutcome check_sweep_trend(const std::vector<RunRecord>& records) {
  CheckOutcome out;
  const auto success = detail::seed_means(records, "success_rate");
  const auto problems = detail::seed_means(records, "problems");
  std::map<std::string, std::map<std::size_t, std::pair<double, double>>> curves;  // object -> n -> (rate, n problems)
  std::map<std::string, std::map<std::size_t, double>> random_curves;
  std::map<std::string, std::size_t> seeds_per_object;
  std::set<std::pair<std::string, std::uint64_t>> seen;
  for (const auto& r : records) {
    if (r.metric != "success_rate") continue;
    const auto key = std::make_tuple(r.object, r.method, r.round, r.sampler);
    if (r.method == "residual_active") {
      curves[r.object][r.n_train] = {success.at(key), problems.at(key)};
      if (seen.insert({r.object, r.seed}).second) ++seeds_per_object[r.object];
    }
    if (r.method == "residual_random") random_curves[r.object][r.n_train] = success.at(key);
  }
  out.require(!curves.empty(), "records contain a residual_active sweep");
  for (const auto& [obj, curve] : curves) {
    const double trials = curve.begin()->second.second * static_cast<double>(seeds_per_object[obj]);
    std::ostringstream trace;
    bool monotone = true;
    const std::pair<double, double>* prev = nullptr;
    for (const auto& [n, v] : curve) {
      trace << " n" << n << ":" << detail::fmt(v.first, 3);
      if (prev) {
        const double se = std::sqrt((prev->first * (1 - prev->first) + v.first * (1 - v.first)) / trials);
        monotone = monotone && v.first >= prev->first - se;
      }
      prev = &v;
    }
    out.require(monotone, obj + " residual_active success nondecreasing within one standard error:" + trace.str());
    const auto largest = curve.rbegin();
    const auto rit = random_curves[obj].find(largest->first);
    const bool has_random = rit != random_curves[obj].end();
    out.require(has_random && largest->second.first >= rit->second,
                obj + " residual_active >= residual_random at n=" + std::to_string(largest->first) + ": " +
                    detail::fmt(largest->second.first, 3) + " vs " +
                    (has_random ? detail::fmt(rit->second, 3) : std::string("missing")));
  }
  return out;
}

/// Active planning: active sampling raises success by >= 10 points, does not
/// raise mean tracking error, and reaches >= 80% success.
inline CheckOutcome check_active_improvement(const std::vector<RunRecord>& records) {
  CheckOutcome out;
  const auto success = detail::seed_means(records, "success_rate");
  const auto error = detail::seed_means(records, "tracking_error");
  std::set<std::tuple<std::string, std::string, std::size_t>> cells;
  for (const auto& r : records) cells.insert({r.object, r.method, r.round});
  out.require(!cells.empty(), "records contain an active planning run");
  for (const auto& [obj, method, round] : cells) {
    const auto a = success.find({obj, method, round, "active"}), b = success.find({obj, method, round, "random"});
    if (a == success.end() || b == success.end()) {
      out.require(false, obj + " " + method + ": both samplers present");
      continue;
    }
    const double ea = error.at({obj, method, round, "active"}), eb = error.at({obj, method, round, "random"});
    const std::string tag = obj + " " + method + " n_round=" + std::to_string(round);
    out.require(a->second - b->second >= 0.10 - 1e-12, tag + " success active " + detail::fmt(a->second, 3) +
                                                           " vs random " + detail::fmt(b->second, 3) +
                                                           " (need +0.10)");
    out.require(ea <= eb, tag + " tracking error active " + detail::fmt(ea) + " <= random " + detail::fmt(eb));
    out.require(a->second >= 0.80, tag + " active success " + detail::fmt(a->second, 3) + " >= 0.80");
  }
  return out;
}

// ---------------------------------------------------------------- output

/// Writes records.csv, the benchmark CSVs and (for active planning) plans
/// into `dir`.
inline void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                          const std::vector<RunRecord>& records,
                          const std::vector<std::pair<std::string, std::vector<BenchmarkRow>>>& benchmarks = {}) {
  std::filesystem::create_directories(dir);
  const std::string generator = "activepush " + to_string(cfg.kind);
  write_text_file(dir / "records.csv", records_to_csv(records, generator));
  for (const auto& [name, rows] : benchmarks) {
    write_text_file(dir / name, benchmark_to_csv(rows, generator));
    if (cfg.kind == ExperimentKind::kActivePlanning) {
      std::string plan_name = name;
      plan_name.replace(0, std::string("benchmark_").size(), "plans_");
      plan_name.replace(plan_name.size() - 4, 4, ".json");
      write_text_file(dir / plan_name, plans_to_json(rows).dump(1) + "\n");
    }
  }
}

}  // namespace activepush
