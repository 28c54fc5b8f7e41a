/// @file
/// Batch acquisition by total-posterior-variance minimization (BAIT in its
/// kernel form) and the outer learn / acquire / retrain loop.
///
/// The acquisition objective for a candidate batch S_sel is
///
///   sum_{x in S_train u S_pool} k[S_train u S_sel](x, x),
///
/// the summed posterior variance over the whole labelled-plus-unlabelled set.
/// It is minimized approximately: greedily add 2B pool points, then greedily
/// remove B of them.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "activepush/ntk.hpp"
#include "activepush/push_simulator.hpp"
#include "activepush/random.hpp"
#include "activepush/residual_model.hpp"

namespace activepush {

enum class Strategy { kBait, kRandom };

inline std::string to_string(Strategy s) { return s == Strategy::kBait ? "bait" : "random"; }

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "bait" || s == "active") return Strategy::kBait;
  if (s == "random") return Strategy::kRandom;
  throw std::invalid_argument("unknown acquisition strategy '" + s + "'");
}

/// Summed posterior variance over `universe` after conditioning on the
/// universe rows `conditioning`.
inline double bait_objective(const NtkFeatures& universe, std::span<const std::size_t> conditioning,
                             double sigma_d = kDefaultNoiseSigma) {
  const KernelState ks(universe.select(conditioning), sigma_d);
  return ks.posterior_variance(universe).sum();
}

struct BaitSelection {
  std::vector<std::size_t> selected;  ///< universe indices, in forward-pick order
  std::vector<std::size_t> forward;   ///< all forward picks before removal
  double objective_before = 0.0;      ///< objective given S_train only
  double objective_after = 0.0;       ///< objective given S_train u selected
};

/// Selects `batch` rows of `pool` (indices into `universe`). `train` and
/// `pool` together must cover the rows the objective is summed over; rows of
/// `universe` outside both are still summed. Ties go to the earlier pool entry.
inline BaitSelection bait_acquire(const NtkFeatures& universe, std::span<const std::size_t> train,
                                  std::span<const std::size_t> pool, std::size_t batch,
                                  double sigma_d = kDefaultNoiseSigma) {
  if (batch > pool.size()) throw std::invalid_argument("bait_acquire: batch larger than pool");
  BaitSelection result;
  if (batch == 0) return result;
  const double noise = sigma_d * sigma_d;
  const Eigen::Index n = universe.size();

  const KernelState ks(universe.select(train), sigma_d);
  Eigen::MatrixXd cov = ks.posterior_covariance(universe);
  result.objective_before = cov.trace();

  // Forward: each pick maximizes ||C e_j||^2 / (C_jj + sigma^2), the drop in
  // summed variance from observing j.
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  const std::size_t n_forward = std::min(2 * batch, pool.size());
  for (std::size_t step = 0; step < n_forward; ++step) {
    const Eigen::VectorXd col_sq = cov.colwise().squaredNorm().transpose();
    double best_gain = -std::numeric_limits<double>::infinity();
    std::size_t best = pool.front();
    for (std::size_t j : pool) {
      if (taken[j]) continue;
      const auto jj = static_cast<Eigen::Index>(j);
      const double gain = col_sq[jj] / (cov(jj, jj) + noise);
      if (gain > best_gain) {
        best_gain = gain;
        best = j;
      }
    }
    taken[best] = 1;
    result.forward.push_back(best);
    const auto b = static_cast<Eigen::Index>(best);
    const Eigen::VectorXd c = cov.col(b);
    cov.noalias() -= c * (c.transpose() / (c[b] + noise));
  }

  // Backward: recompute the conditioning on S = S_train u forward picks in
  // precision form. The posterior column of a conditioned point x is
  // sigma^2 (A^-1 K_SU)_x and sigma^2 - C_xx = sigma^4 (A^-1)_xx, so removing
  // x raises the objective by ||W_x||^2 / (A^-1)_xx with W = A^-1 K_SU.
  std::vector<std::size_t> cond(train.begin(), train.end());
  cond.insert(cond.end(), result.forward.begin(), result.forward.end());
  const std::size_t n_train = train.size();
  std::vector<std::size_t> members = result.forward;
  if (members.size() > batch) {
    const NtkFeatures s_feat = universe.select(cond);
    const Eigen::MatrixXd k_su = gram(s_feat, universe);
    const auto s = static_cast<Eigen::Index>(cond.size());
    Eigen::MatrixXd a(s, s);
    for (Eigen::Index j = 0; j < s; ++j) a.col(j) = k_su.col(static_cast<Eigen::Index>(cond[static_cast<std::size_t>(j)]));
    a = 0.5 * (a + a.transpose()).eval();
    a.diagonal().array() += noise;
    const Eigen::MatrixXd l = detail::robust_cholesky(a);
    Eigen::MatrixXd a_inv = Eigen::MatrixXd::Identity(s, s);
    l.triangularView<Eigen::Lower>().solveInPlace(a_inv);
    l.transpose().triangularView<Eigen::Upper>().solveInPlace(a_inv);
    Eigen::MatrixXd w = a_inv * k_su;

    // Rows >= n_train belong to forward picks and are the removable ones.
    std::vector<char> removed(static_cast<std::size_t>(s), 0);
    std::size_t remaining = members.size();
    while (remaining > batch) {
      double best_cost = std::numeric_limits<double>::infinity();
      Eigen::Index best = -1;
      // Scan in pool order for deterministic tie-breaking.
      for (std::size_t j : pool) {
        const auto it = std::find(result.forward.begin(), result.forward.end(), j);
        if (it == result.forward.end()) continue;
        const auto r = static_cast<Eigen::Index>(n_train + static_cast<std::size_t>(it - result.forward.begin()));
        if (removed[static_cast<std::size_t>(r)]) continue;
        const double cost = w.row(r).squaredNorm() / a_inv(r, r);
        if (best < 0 || cost < best_cost) {
          best_cost = cost;
          best = r;
        }
      }
      if (best < 0) throw std::logic_error("bait_acquire: no removable pick");
      removed[static_cast<std::size_t>(best)] = 1;
      --remaining;
      const double pivot = a_inv(best, best);
      const Eigen::VectorXd a_col = a_inv.col(best);
      const Eigen::RowVectorXd w_row = w.row(best);
      a_inv.noalias() -= a_col * (a_col.transpose() / pivot);
      w.noalias() -= a_col * (w_row / pivot);
      a_inv.row(best).setZero();
      a_inv.col(best).setZero();
      w.row(best).setZero();
    }
    members.clear();
    for (std::size_t k = 0; k < result.forward.size(); ++k) {
      if (!removed[n_train + k]) members.push_back(result.forward[k]);
    }
  }
  result.selected = members;
  std::vector<std::size_t> final_cond(train.begin(), train.end());
  final_cond.insert(final_cond.end(), members.begin(), members.end());
  result.objective_after = bait_objective(universe, final_cond, sigma_d);
  return result;
}

struct AcquisitionConfig {
  std::size_t batch = 20;
  std::size_t rounds = 5;
  Strategy strategy = Strategy::kBait;
  double sigma_d = kDefaultNoiseSigma;
  SketchConfig sketch;
  std::uint64_t seed = 0;
};

struct RoundMetrics {
  std::size_t round = 0;
  std::size_t n_train = 0;
  std::string strategy;
  double validation_rmse = 0.0;
};

struct LearningResult {
  std::vector<DynamicsModel> models;  ///< models[r] after round r; models[0] is the initial model
  std::vector<RoundMetrics> metrics;  ///< one entry per completed round (r >= 1)
  std::vector<Interaction> train_data;
  std::vector<PushParams> remaining_pool;
};

/// Labels a batch of pushes for acquisition round `round`.
using Labeler = std::function<std::vector<Interaction>(const std::vector<PushParams>&, std::size_t round)>;

/// Learn / acquire / retrain loop. Each round selects `batch` pushes from the
/// pool, labels them, moves them to the training set and retrains the model
/// from scratch. Stops early if the pool runs out.
inline LearningResult active_learning_loop(const DynamicsModel& initial, const Labeler& label,
                                           const TrainConfig& train_cfg, const AcquisitionConfig& acq,
                                           std::vector<PushParams> pool, const std::vector<Interaction>& validation,
                                           std::vector<Interaction> initial_train = {}) {
  if (acq.batch < 1) throw std::invalid_argument("AcquisitionConfig: batch must be >= 1");
  LearningResult out;
  out.models.push_back(initial);
  out.train_data = std::move(initial_train);
  DynamicsModel model = initial;
  for (std::size_t round = 1; round <= acq.rounds; ++round) {
    if (pool.size() < acq.batch) break;
    std::vector<std::size_t> chosen;  // positions in `pool`
    if (acq.strategy == Strategy::kRandom || model.kind() == ModelKind::kPhysics) {
      std::vector<std::size_t> order(pool.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(acq.seed, round));
      for (std::size_t i = 0; i < acq.batch; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(order.size() - i));
        std::swap(order[i], order[j]);
      }
      chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(acq.batch));
    } else {
      // Universe rows: training set first, then the pool.
      std::vector<PushParams> universe_params;
      for (const auto& d : out.train_data) universe_params.push_back(d.params);
      universe_params.insert(universe_params.end(), pool.begin(), pool.end());
      const NtkFeatures universe = model.ntk_features(universe_params, acq.sketch);
      std::vector<std::size_t> train_idx(out.train_data.size()), pool_idx(pool.size());
      std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
      std::iota(pool_idx.begin(), pool_idx.end(), out.train_data.size());
      const BaitSelection sel = bait_acquire(universe, train_idx, pool_idx, acq.batch, acq.sigma_d);
      for (std::size_t u : sel.selected) chosen.push_back(u - out.train_data.size());
    }

    std::vector<PushParams> batch;
    for (std::size_t j : chosen) batch.push_back(pool[j]);
    std::vector<char> drop(pool.size(), 0);
    for (std::size_t j : chosen) drop[j] = 1;
    std::vector<PushParams> rest;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (!drop[j]) rest.push_back(pool[j]);
    }
    pool = std::move(rest);

    const std::vector<Interaction> labelled = label(batch, round);
    out.train_data.insert(out.train_data.end(), labelled.begin(), labelled.end());

    TrainConfig cfg = train_cfg;
    cfg.seed = derive_seed(train_cfg.seed, round);
    model.train(out.train_data, cfg);
    out.models.push_back(model);
    out.metrics.push_back({round, out.train_data.size(), to_string(acq.strategy), model.rmse(validation)});
  }
  out.remaining_pool = std::move(pool);
  return out;
}

}  // namespace activepush
