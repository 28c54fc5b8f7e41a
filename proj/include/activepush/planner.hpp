/// @file
/// Kinodynamic planning over object poses with pushes as discrete controls:
/// the Push-to-Grasp goal region, state validity, the random and
/// uncertainty-aware control samplers, Stable Sparse RRT (SST) and open-loop
/// execution on the ground-truth simulator.

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "activepush/ntk.hpp"
#include "activepush/push_physics.hpp"
#include "activepush/push_simulator.hpp"
#include "activepush/random.hpp"
#include "activepush/residual_model.hpp"
#include "activepush/se2.hpp"

namespace activepush {

enum class TableEdge { kPosX, kNegX, kPosY, kNegY };

inline std::string to_string(TableEdge e) {
  switch (e) {
    case TableEdge::kPosX: return "+x";
    case TableEdge::kNegX: return "-x";
    case TableEdge::kPosY: return "+y";
    case TableEdge::kNegY: return "-y";
  }
  return "?";
}

inline TableEdge table_edge_from_string(const std::string& s) {
  if (s == "+x") return TableEdge::kPosX;
  if (s == "-x") return TableEdge::kNegX;
  if (s == "+y") return TableEdge::kPosY;
  if (s == "-y") return TableEdge::kNegY;
  throw std::invalid_argument("unknown table edge '" + s + "'");
}

struct Table {
  double x_min = -0.4;
  double x_max = 0.4;
  double y_min = -0.3;
  double y_max = 0.3;
};

/// Convex polygon, vertices in order (either winding).
using Polygon = std::vector<Eigen::Vector2d>;

struct PlanningProblem {
  int id = 0;
  Pose2 start;
  Table table;
  std::vector<Polygon> obstacles;
  ObjectSpec object;
  TableEdge goal_edge = TableEdge::kPosX;
  double overhang_min = 0.025;
};

// ---------------------------------------------------------------- geometry

inline std::array<Eigen::Vector2d, 4> obb_corners(const Pose2& s, const ObjectSpec& obj) {
  const double hx = obj.half_x, hy = obj.half_y;
  return {s.transform({hx, hy}), s.transform({-hx, hy}), s.transform({-hx, -hy}), s.transform({hx, -hy})};
}

/// Signed distance of `p` beyond `edge` (positive outside the table).
inline double beyond_edge(const Eigen::Vector2d& p, const Table& t, TableEdge edge) {
  switch (edge) {
    case TableEdge::kPosX: return p.x() - t.x_max;
    case TableEdge::kNegX: return t.x_min - p.x();
    case TableEdge::kPosY: return p.y() - t.y_max;
    case TableEdge::kNegY: return t.y_min - p.y();
  }
  return 0.0;
}

/// Largest distance any OBB corner extends past the goal edge.
inline double overhang(const Pose2& s, const PlanningProblem& prob) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : obb_corners(s, prob.object)) best = std::max(best, beyond_edge(c, prob.table, prob.goal_edge));
  return best;
}

inline bool com_on_table(const Pose2& s, const Table& t) {
  return s.x >= t.x_min && s.x <= t.x_max && s.y >= t.y_min && s.y <= t.y_max;
}

/// Separating-axis test for two convex polygons. Touching counts as overlap.
template <typename A, typename B>
bool convex_overlap(const A& a, const B& b) {
  auto separated_along_edges = [](const auto& p, const auto& q) {
    const std::size_t n = p.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d e = p[(i + 1) % n] - p[i];
      const Eigen::Vector2d axis(-e.y(), e.x());
      double p_lo = std::numeric_limits<double>::infinity(), p_hi = -p_lo;
      double q_lo = p_lo, q_hi = -p_lo;
      for (const auto& v : p) {
        const double d = axis.dot(v);
        p_lo = std::min(p_lo, d);
        p_hi = std::max(p_hi, d);
      }
      for (const auto& v : q) {
        const double d = axis.dot(v);
        q_lo = std::min(q_lo, d);
        q_hi = std::max(q_hi, d);
      }
      if (p_hi < q_lo || q_hi < p_lo) return true;
    }
    return false;
  };
  if (a.size() < 3 || b.size() < 3) return false;
  return !separated_along_edges(a, b) && !separated_along_edges(b, a);
}

/// Goal region: centre of mass on the table and some corner at least
/// overhang_min past the goal edge.
inline bool is_goal(const Pose2& s, const PlanningProblem& prob) {
  return com_on_table(s, prob.table) && overhang(s, prob) >= prob.overhang_min;
}

/// Free space: centre of mass on the table, no corner past any edge other than
/// the goal edge, and no overlap with an obstacle.
inline bool is_valid_state(const Pose2& s, const PlanningProblem& prob) {
  if (!com_on_table(s, prob.table)) return false;
  const auto corners = obb_corners(s, prob.object);
  for (TableEdge e : {TableEdge::kPosX, TableEdge::kNegX, TableEdge::kPosY, TableEdge::kNegY}) {
    if (e == prob.goal_edge) continue;
    for (const auto& c : corners) {
      if (beyond_edge(c, prob.table, e) > 0.0) return false;
    }
  }
  for (const auto& obstacle : prob.obstacles) {
    if (convex_overlap(corners, obstacle)) return false;
  }
  return true;
}

inline void validate(const PlanningProblem& prob) {
  validate(prob.object);
  if (!(prob.overhang_min > 0.0)) throw std::invalid_argument("PlanningProblem: overhang_min must be positive");
  if (!(prob.table.x_max > prob.table.x_min) || !(prob.table.y_max > prob.table.y_min)) {
    throw std::invalid_argument("PlanningProblem: empty table");
  }
  if (!is_valid_state(prob.start, prob)) throw std::invalid_argument("PlanningProblem: start is not in free space");
}

/// Weighted SE(2) distance sqrt(dx^2 + dy^2 + w dtheta^2), dtheta wrapped.
inline double state_distance(const Pose2& a, const Pose2& b, double angle_weight) {
  const double dx = a.x - b.x, dy = a.y - b.y, dt = wrap_angle(a.theta - b.theta);
  return std::sqrt(dx * dx + dy * dy + angle_weight * dt * dt);
}

/// Relative transform predicted by `model`, applied in the object's frame.
inline Pose2 propagate(const Pose2& state, const PushParams& u, const DynamicsModel& model) {
  return state * model.predict(u);
}

// ---------------------------------------------------------------- samplers

inline PushParams sample_control_random(const ObjectSpec& obj, Rng& rng, double max_distance = kDefaultMaxPushDistance) {
  return sample_push(obj, rng, max_distance);
}

struct ActiveChoice {
  std::vector<PushParams> candidates;
  Eigen::VectorXd variances;
  std::size_t index = 0;
  const PushParams& control() const { return candidates[index]; }
};

/// Draws K uniform candidates and returns them with their posterior variance
/// under `ks`; `index` is the argmin (ties to the lowest index).
inline ActiveChoice sample_control_active_detail(const DynamicsModel& model, const KernelState& ks, Rng& rng,
                                                 std::size_t k) {
  if (k < 1) throw std::invalid_argument("sample_control_active: K must be >= 1");
  ActiveChoice out;
  out.candidates.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.candidates.push_back(sample_push(model.prior_object(), rng, model.max_distance()));
  out.variances = ks.posterior_variance(model.ntk_features(out.candidates));
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < out.variances.size(); ++i) {
    if (out.variances[i] < out.variances[best]) best = i;
  }
  out.index = static_cast<std::size_t>(best);
  return out;
}

inline PushParams sample_control_active(const DynamicsModel& model, const KernelState& ks, Rng& rng, std::size_t k) {
  return sample_control_active_detail(model, ks, rng, k).control();
}

class ControlSampler {
 public:
  virtual ~ControlSampler() = default;
  virtual PushParams sample(Rng& rng) = 0;
  virtual std::string name() const = 0;
};

class RandomControlSampler final : public ControlSampler {
 public:
  RandomControlSampler(ObjectSpec obj, double max_distance = kDefaultMaxPushDistance)
      : obj_(obj), max_distance_(max_distance) {}
  PushParams sample(Rng& rng) override { return sample_control_random(obj_, rng, max_distance_); }
  std::string name() const override { return "random"; }

 private:
  ObjectSpec obj_;
  double max_distance_;
};

/// Lowest-variance-of-K sampler. Holds references; model and kernel must
/// outlive the sampler.
class ActiveControlSampler final : public ControlSampler {
 public:
  ActiveControlSampler(const DynamicsModel& model, const KernelState& ks, std::size_t k)
      : model_(model), ks_(ks), k_(k) {
    if (k < 1) throw std::invalid_argument("ActiveControlSampler: K must be >= 1");
  }
  PushParams sample(Rng& rng) override { return sample_control_active(model_, ks_, rng, k_); }
  std::string name() const override { return "active"; }

 private:
  const DynamicsModel& model_;
  const KernelState& ks_;
  std::size_t k_;
};

// ---------------------------------------------------------------- SST

struct SSTConfig {
  double selection_radius = 0.2;
  double pruning_radius = 0.1;
  std::size_t max_iterations = 30000;
  /// Wall-clock limit in seconds; 0 disables it. Hitting it makes the result
  /// depend on machine speed.
  double time_limit_s = 10.0;
  std::size_t candidate_batch = 32;
  double goal_bias = 0.05;
  double angle_weight = 0.05;
  std::uint64_t seed = 0;
};

inline void validate(const SSTConfig& cfg) {
  if (!(cfg.pruning_radius > 0.0) || !(cfg.pruning_radius < cfg.selection_radius)) {
    throw std::invalid_argument("SSTConfig: need 0 < pruning_radius < selection_radius");
  }
  if (cfg.candidate_batch < 1) throw std::invalid_argument("SSTConfig: candidate_batch must be >= 1");
  if (cfg.goal_bias < 0.0 || cfg.goal_bias > 1.0) throw std::invalid_argument("SSTConfig: goal_bias outside [0, 1]");
  if (cfg.angle_weight < 0.0) throw std::invalid_argument("SSTConfig: angle_weight must be nonnegative");
  if (cfg.time_limit_s < 0.0) throw std::invalid_argument("SSTConfig: time_limit_s must be nonnegative");
}

struct Plan {
  std::vector<PushParams> controls;
  std::vector<Pose2> states;  ///< predicted, states.front() is the start
  std::size_t cost() const { return controls.size(); }
};

struct PlanResult {
  bool solved = false;
  Plan plan;
  std::size_t iterations = 0;
  std::size_t tree_size = 0;  ///< nodes alive at the end
  bool timed_out = false;
};

/// Checks the plan invariants against `prob`.
inline bool plan_is_consistent(const Plan& plan, const PlanningProblem& prob) {
  if (plan.states.size() != plan.controls.size() + 1) return false;
  for (const auto& s : plan.states) {
    if (!is_valid_state(s, prob)) return false;
  }
  return is_goal(plan.states.back(), prob);
}

/// Uniform state over the table and heading. With probability goal_bias it is
/// drawn from a band along the goal edge and kept if it lies in the goal region.
inline Pose2 sample_state(const PlanningProblem& prob, const SSTConfig& cfg, Rng& rng) {
  const Table& t = prob.table;
  if (cfg.goal_bias > 0.0 && rng.uniform() < cfg.goal_bias) {
    const double band = std::max(prob.object.half_x, prob.object.half_y);
    for (int attempt = 0; attempt < 32; ++attempt) {
      const double inset = rng.uniform(0.0, band);
      double x = 0.0, y = 0.0;
      switch (prob.goal_edge) {
        case TableEdge::kPosX: x = t.x_max - inset; y = rng.uniform(t.y_min, t.y_max); break;
        case TableEdge::kNegX: x = t.x_min + inset; y = rng.uniform(t.y_min, t.y_max); break;
        case TableEdge::kPosY: y = t.y_max - inset; x = rng.uniform(t.x_min, t.x_max); break;
        case TableEdge::kNegY: y = t.y_min + inset; x = rng.uniform(t.x_min, t.x_max); break;
      }
      const Pose2 s(x, y, rng.uniform(-std::numbers::pi, std::numbers::pi));
      if (is_goal(s, prob)) return s;
    }
  }
  const double x = rng.uniform(t.x_min, t.x_max);
  const double y = rng.uniform(t.y_min, t.y_max);
  return Pose2(x, y, rng.uniform(-std::numbers::pi, std::numbers::pi));
}

namespace detail {

struct SstNode {
  Pose2 state;
  PushParams control;
  std::ptrdiff_t parent = -1;
  std::size_t cost = 0;
  std::size_t children = 0;
  bool active = true;
  bool alive = true;
  bool goal = false;
};

struct Witness {
  Pose2 point;
  std::ptrdiff_t rep = -1;
};

inline Plan extract_plan(const std::vector<SstNode>& nodes, std::ptrdiff_t leaf) {
  Plan plan;
  for (std::ptrdiff_t i = leaf; i >= 0; i = nodes[static_cast<std::size_t>(i)].parent) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    plan.states.push_back(n.state);
    if (n.parent >= 0) plan.controls.push_back(n.control);
  }
  std::reverse(plan.states.begin(), plan.states.end());
  std::reverse(plan.controls.begin(), plan.controls.end());
  return plan;
}

}  // namespace detail

/// Stable Sparse RRT with unit cost per push. Returns the cheapest
/// goal-reaching plan found within the iteration and time budgets. A node is
/// only extended while its child could still beat the best plan, so the
/// search ends early once no such node remains.
inline PlanResult sst_plan(const PlanningProblem& prob, const DynamicsModel& model, ControlSampler& sampler,
                           const SSTConfig& cfg) {
  validate(prob);
  validate(cfg);
  using detail::SstNode;
  using detail::Witness;
  PlanResult result;
  if (is_goal(prob.start, prob)) {
    result.solved = true;
    result.plan.states.push_back(prob.start);
    result.tree_size = 1;
    return result;
  }

  Rng rng(cfg.seed);
  std::vector<SstNode> nodes;
  std::vector<Witness> witnesses;
  nodes.push_back({prob.start, {}, -1, 0, 0, true, true, false});
  witnesses.push_back({prob.start, 0});
  std::size_t best_cost = std::numeric_limits<std::size_t>::max();
  const auto t0 = std::chrono::steady_clock::now();
  const double w = cfg.angle_weight;

  auto extendable = [&](const SstNode& n) { return n.active && !n.goal && n.cost + 1 < best_cost; };

  for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
    if (cfg.time_limit_s > 0.0 && (iter & 63u) == 0 && iter > 0) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (elapsed > cfg.time_limit_s) {
        result.timed_out = true;
        break;
      }
    }
    result.iterations = iter + 1;

    // Best-near selection: cheapest extendable node within the selection
    // radius of a random sample, else the nearest extendable node.
    const Pose2 target = sample_state(prob, cfg, rng);
    std::ptrdiff_t chosen = -1, nearest = -1;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const SstNode& n = nodes[i];
      if (!n.alive || !extendable(n)) continue;
      const double d = state_distance(n.state, target, w);
      if (d < nearest_d) {
        nearest_d = d;
        nearest = static_cast<std::ptrdiff_t>(i);
      }
      if (d <= cfg.selection_radius &&
          (chosen < 0 || n.cost < nodes[static_cast<std::size_t>(chosen)].cost)) {
        chosen = static_cast<std::ptrdiff_t>(i);
      }
    }
    if (chosen < 0) chosen = nearest;
    if (chosen < 0) break;  // nothing left that could improve the best plan

    const PushParams u = sampler.sample(rng);
    const SstNode& parent = nodes[static_cast<std::size_t>(chosen)];
    const Pose2 next = propagate(parent.state, u, model);
    if (!is_valid_state(next, prob)) continue;
    const std::size_t cost = parent.cost + 1;

    // Witness of the new state.
    std::ptrdiff_t wit = -1;
    double wit_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < witnesses.size(); ++i) {
      const double d = state_distance(witnesses[i].point, next, w);
      if (d < wit_d) {
        wit_d = d;
        wit = static_cast<std::ptrdiff_t>(i);
      }
    }
    if (wit_d > cfg.pruning_radius) {
      witnesses.push_back({next, -1});
      wit = static_cast<std::ptrdiff_t>(witnesses.size() - 1);
    }
    Witness& witness = witnesses[static_cast<std::size_t>(wit)];
    if (witness.rep >= 0 && nodes[static_cast<std::size_t>(witness.rep)].cost <= cost) continue;

    const auto id = static_cast<std::ptrdiff_t>(nodes.size());
    nodes.push_back({next, u, chosen, cost, 0, true, true, is_goal(next, prob)});
    ++nodes[static_cast<std::size_t>(chosen)].children;
    const std::ptrdiff_t old = witness.rep;
    witness.rep = id;

    // The displaced representative leaves the active set; inactive leaves are
    // pruned up the tree.
    if (old >= 0) {
      nodes[static_cast<std::size_t>(old)].active = false;
      std::ptrdiff_t cur = old;
      while (cur >= 0) {
        SstNode& n = nodes[static_cast<std::size_t>(cur)];
        if (n.active || n.children > 0 || !n.alive || n.parent < 0) break;
        n.alive = false;
        const std::ptrdiff_t up = n.parent;
        --nodes[static_cast<std::size_t>(up)].children;
        cur = up;
      }
    }

    if (nodes.back().goal && cost < best_cost) {
      best_cost = cost;
      result.solved = true;
      result.plan = detail::extract_plan(nodes, id);
    }
  }
  for (const auto& n : nodes) result.tree_size += n.alive ? 1 : 0;
  return result;
}

// ---------------------------------------------------------------- execution

struct ExecutionResult {
  bool success = false;
  double tracking_error = 0.0;
  std::vector<Pose2> executed;  ///< ground-truth states, executed.front() is the start
};

/// Replays the plan open loop on the ground-truth simulator. Push i uses
/// noise stream batch_seed(gt.seed, i).
inline ExecutionResult execute_plan(const Plan& plan, const PlanningProblem& prob, const GroundTruthConfig& gt) {
  if (plan.states.size() != plan.controls.size() + 1) throw std::invalid_argument("execute_plan: malformed plan");
  ExecutionResult out;
  Pose2 state = plan.states.front();
  out.executed.push_back(state);
  double err = 0.0;
  for (std::size_t i = 0; i < plan.controls.size(); ++i) {
    state = state * simulate_push(plan.controls[i], prob.object, gt, batch_seed(gt.seed, i));
    out.executed.push_back(state);
    err += std::sqrt(se2_mse(plan.states[i + 1], state));
  }
  out.tracking_error = plan.controls.empty() ? 0.0 : err / static_cast<double>(plan.controls.size());
  out.success = is_goal(state, prob);
  return out;
}

// ---------------------------------------------------------------- problems

/// Template for a family of random planning problems.
struct ProblemSetConfig {
  Table table;
  std::vector<Polygon> obstacles = {{{-0.40, -0.10}, {-0.28, -0.10}, {-0.28, 0.10}, {-0.40, 0.10}}};
  std::vector<TableEdge> goal_edges = {TableEdge::kPosX, TableEdge::kPosY, TableEdge::kNegY};
  /// Start centre of mass is drawn uniformly from this box.
  Table start_region = {-0.12, 0.04, -0.10, 0.10};
  double overhang_min = 0.025;
};

/// `n` problems with valid, non-goal starts; problem i depends only on
/// (seed, i).
inline std::vector<PlanningProblem> make_problems(std::size_t n, const ObjectSpec& obj, const ProblemSetConfig& cfg,
                                                  std::uint64_t seed) {
  if (cfg.goal_edges.empty()) throw std::invalid_argument("make_problems: no goal edges");
  std::vector<PlanningProblem> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    PlanningProblem p;
    p.id = static_cast<int>(i);
    p.table = cfg.table;
    p.obstacles = cfg.obstacles;
    p.object = obj;
    p.overhang_min = cfg.overhang_min;
    p.goal_edge = cfg.goal_edges[rng.uniform_index(cfg.goal_edges.size())];
    bool found = false;
    for (int attempt = 0; attempt < 10000 && !found; ++attempt) {
      p.start = Pose2(rng.uniform(cfg.start_region.x_min, cfg.start_region.x_max),
                      rng.uniform(cfg.start_region.y_min, cfg.start_region.y_max),
                      rng.uniform(-std::numbers::pi, std::numbers::pi));
      found = is_valid_state(p.start, p) && !is_goal(p.start, p);
    }
    if (!found) throw std::runtime_error("make_problems: start region has no valid start");
    out.push_back(p);
  }
  return out;
}

}  // namespace activepush
