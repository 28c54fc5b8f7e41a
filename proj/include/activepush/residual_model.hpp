/// @file
/// Learned push dynamics: the physics prior alone, a plain network, or the
/// residual hybrid in which the network sees the push parameters together with
/// the prior's tangent output and predicts a tangent-space correction.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "activepush/mlp.hpp"
#include "activepush/ntk.hpp"
#include "activepush/push_physics.hpp"
#include "activepush/push_simulator.hpp"
#include "activepush/random.hpp"
#include "activepush/se2.hpp"

namespace activepush {

enum class ModelKind { kPhysics, kPlain, kResidual };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kPhysics: return "physics";
    case ModelKind::kPlain: return "plain";
    case ModelKind::kResidual: return "residual";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "physics") return ModelKind::kPhysics;
  if (s == "plain") return ModelKind::kPlain;
  if (s == "residual") return ModelKind::kResidual;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

struct TrainConfig {
  std::size_t batch_size = 16;
  int epochs = 1000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Reduce-on-plateau on the epoch training loss (relative threshold).
  double plateau_factor = 0.5;
  int plateau_patience = 50;
  double plateau_threshold = 1e-4;
  double min_learning_rate = 1e-5;
  /// Stop once a plateau is detected at the minimum learning rate.
  bool stop_on_convergence = true;
  std::uint64_t seed = 0;
  Se2Weights weights;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (cfg.epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
}

struct TrainReport {
  int epochs_run = 0;
  double initial_loss = 0.0;  ///< mean loss over the dataset before the first update
  double final_loss = 0.0;    ///< lowest full-dataset loss, attained by the kept parameters
  std::vector<double> epoch_loss;
  double final_learning_rate = 0.0;
};

/// Forward dynamics model. The network output is in label-scaled units:
/// tangent = base + scaler.inverse(net(input)), where base is the prior's
/// tangent (residual) or zero (plain).
class DynamicsModel {
 public:
  DynamicsModel() = default;

  DynamicsModel(ModelKind kind, const ObjectSpec& object, std::uint64_t init_seed = 0,
                Activation activation = Activation::kTanh, double max_distance = kDefaultMaxPushDistance)
      : kind_(kind), prior_(object), max_distance_(max_distance) {
    prior_.friction_ratio_c = kPriorFrictionRatio;
    if (kind_ != ModelKind::kPhysics) {
      net_ = Mlp<double>(make_layer_dims(input_dim(), 3), activation);
      net_.initialize(init_seed, true);
    }
  }

  ModelKind kind() const { return kind_; }
  const ObjectSpec& prior_object() const { return prior_; }
  void set_prior_object(const ObjectSpec& obj) { prior_ = obj; }
  double max_distance() const { return max_distance_; }
  const ProfileConfig& profile() const { return profile_; }
  int input_dim() const { return kind_ == ModelKind::kResidual ? 6 : 3; }

  const Mlp<double>& network() const { return net_; }
  Mlp<double>& network() { return net_; }
  const LabelScaler& scaler() const { return scaler_; }
  void set_scaler(const LabelScaler& s) { scaler_ = s; }

  Eigen::Vector3d physics_tangent(const PushParams& p) const {
    return log(analytic_push(p, prior_, profile_)).vector();
  }

  /// Fixed affine normalization of the network input.
  Eigen::VectorXd encode_input(const PushParams& p) const {
    Eigen::VectorXd x(input_dim());
    const double max_offset = std::max(prior_.half_x, prior_.half_y);
    x[0] = (p.side - 2.5) / 1.5;
    x[1] = p.offset / max_offset;
    x[2] = 2.0 * p.distance / max_distance_ - 1.0;
    if (kind_ == ModelKind::kResidual) {
      const Eigen::Vector3d phys = physics_tangent(p);
      x[3] = phys[0] / max_distance_;
      x[4] = phys[1] / max_distance_;
      x[5] = phys[2];
    }
    return x;
  }

  Eigen::MatrixXd encode_inputs(std::span<const PushParams> ps) const {
    Eigen::MatrixXd x(input_dim(), static_cast<Eigen::Index>(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = encode_input(ps[i]);
    return x;
  }

  Eigen::Vector3d base_tangent(const PushParams& p) const {
    return kind_ == ModelKind::kPlain ? Eigen::Vector3d::Zero() : physics_tangent(p);
  }

  Eigen::Vector3d predict_tangent(const PushParams& p) const {
    if (kind_ == ModelKind::kPhysics) return physics_tangent(p);
    const Eigen::VectorXd out = net_.forward(Eigen::MatrixXd(encode_input(p)));
    return base_tangent(p) + scaler_.inverse(Eigen::Vector3d(out));
  }

  /// Predicted relative transform of push `p`.
  Pose2 predict(const PushParams& p) const {
    if (kind_ == ModelKind::kPhysics) return analytic_push(p, prior_, profile_);
    return exp(Twist2::from_vector(predict_tangent(p)));
  }

  std::vector<Pose2> predict(std::span<const PushParams> ps) const {
    std::vector<Pose2> out;
    out.reserve(ps.size());
    if (kind_ == ModelKind::kPhysics) {
      for (const auto& p : ps) out.push_back(analytic_push(p, prior_, profile_));
      return out;
    }
    const Eigen::MatrixXd net_out = net_.forward(encode_inputs(ps));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const Eigen::Vector3d t = base_tangent(ps[i]) + scaler_.inverse(Eigen::Vector3d(net_out.col(static_cast<Eigen::Index>(i))));
      out.push_back(exp(Twist2::from_vector(t)));
    }
    return out;
  }

  /// Gradient of each network output with respect to all parameters.
  Eigen::MatrixXd param_gradient(const PushParams& p) const { return net_.param_gradient(encode_input(p)); }

  /// NTK features of pushes `ps` at the current parameters.
  NtkFeatures ntk_features(std::span<const PushParams> ps, const SketchConfig& sketch = {}) const {
    if (kind_ == ModelKind::kPhysics) throw std::logic_error("physics model has no network features");
    return activepush::ntk_features(net_, encode_inputs(ps), sketch);
  }

  /// Mean se2_mse of the model over `data`.
  double mean_loss(const std::vector<Interaction>& data, const Se2Weights& w = {}) const {
    if (data.empty()) return 0.0;
    std::vector<PushParams> ps;
    ps.reserve(data.size());
    for (const auto& d : data) ps.push_back(d.params);
    const std::vector<Pose2> pred = predict(ps);
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) total += se2_mse(pred[i], data[i].outcome, w);
    return total / static_cast<double>(data.size());
  }

  double rmse(const std::vector<Interaction>& data) const { return std::sqrt(mean_loss(data)); }

  /// Re-initializes the network from cfg.seed and fits it to `data` by
  /// minibatch Adam on the SE(2) loss, with reduce-on-plateau scheduling.
  /// Keeps the parameters with the lowest full-dataset loss seen.
  TrainReport train(const std::vector<Interaction>& data, const TrainConfig& cfg);

 private:
  ModelKind kind_ = ModelKind::kResidual;
  ObjectSpec prior_;
  ProfileConfig profile_;
  double max_distance_ = kDefaultMaxPushDistance;
  Mlp<double> net_;
  LabelScaler scaler_;
};

inline TrainReport DynamicsModel::train(const std::vector<Interaction>& data, const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("DynamicsModel::train: empty dataset");
  validate(cfg);
  TrainReport report;
  if (kind_ == ModelKind::kPhysics) {
    report.initial_loss = report.final_loss = mean_loss(data, cfg.weights);
    return report;
  }

  const auto n = static_cast<Eigen::Index>(data.size());
  std::vector<PushParams> ps;
  ps.reserve(data.size());
  for (const auto& d : data) ps.push_back(d.params);
  const Eigen::MatrixXd inputs = encode_inputs(ps);
  Eigen::MatrixXd base(3, n);
  Eigen::MatrixXd residual(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    base.col(i) = base_tangent(ps[static_cast<std::size_t>(i)]);
    residual.row(i) = (log(data[static_cast<std::size_t>(i)].outcome).vector() - base.col(i)).transpose();
  }
  scaler_ = scale_labels(residual, false).second;

  net_.initialize(cfg.seed, true);
  const Eigen::Index num_params = net_.num_params();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(num_params);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(num_params);
  Eigen::VectorXd grad(num_params);
  Mlp<double>::Cache cache;

  auto batch_loss = [&](std::span<const Eigen::Index> idx, bool with_grad) {
    const auto b = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd x(inputs.rows(), b);
    for (Eigen::Index j = 0; j < b; ++j) x.col(j) = inputs.col(idx[static_cast<std::size_t>(j)]);
    const Eigen::MatrixXd out = with_grad ? net_.forward(x, cache) : net_.forward(x);
    Eigen::MatrixXd g_out(3, b);
    double total = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      const Eigen::Index i = idx[static_cast<std::size_t>(j)];
      const Eigen::Vector3d xi = base.col(i) + scaler_.inverse(Eigen::Vector3d(out.col(j)));
      Eigen::Vector3d g_xi;
      total += se2_mse_tangent(xi, data[static_cast<std::size_t>(i)].outcome, g_xi, cfg.weights);
      g_out.col(j) = g_xi.cwiseProduct(scaler_.scale) / static_cast<double>(b);
    }
    if (with_grad) {
      grad.setZero();
      net_.backward(cache, g_out, grad);
    }
    return total;
  };

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  report.initial_loss = batch_loss(order, false) / static_cast<double>(n);
  Eigen::VectorXd best_params = net_.params();
  double best_loss = report.initial_loss;

  Rng rng(derive_seed(cfg.seed, 0x7261696eull));
  const auto batch = static_cast<Eigen::Index>(std::min<std::size_t>(cfg.batch_size, data.size()));
  double lr = cfg.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min(batch, n - start);
      batch_loss(std::span<const Eigen::Index>(order.data() + start, static_cast<std::size_t>(len)), true);
      ++step;
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      net_.params().array() -= lr / bc1 * m.array() / ((v.array() / bc2).sqrt() + cfg.adam_eps);
    }
    const double epoch_loss = batch_loss(order, false) / static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      std::ostringstream msg;
      msg << "training diverged: non-finite loss at epoch " << epoch << " (lr " << lr << ", " << n << " samples)";
      throw std::runtime_error(msg.str());
    }
    report.epoch_loss.push_back(epoch_loss);
    report.epochs_run = epoch + 1;
    if (epoch_loss < best_loss) {
      best_loss = epoch_loss;
      best_params = net_.params();
    }
    if (epoch_loss < best * (1.0 - cfg.plateau_threshold)) {
      best = epoch_loss;
      bad_epochs = 0;
    } else if (++bad_epochs > cfg.plateau_patience) {
      if (lr <= cfg.min_learning_rate * (1.0 + 1e-12)) {
        if (cfg.stop_on_convergence) break;
      }
      lr = std::max(lr * cfg.plateau_factor, cfg.min_learning_rate);
      bad_epochs = 0;
    }
  }
  report.final_learning_rate = lr;
  net_.params() = best_params;
  report.final_loss = best_loss;
  return report;
}

}  // namespace activepush
