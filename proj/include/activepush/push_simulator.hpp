/// @file
/// Ground-truth pushing simulator. It steps the pusher along its path and
/// relaxes the prior's simplifications: the object's own friction ratio, a
/// pusher that travels in a straight world line (so the force direction tilts
/// in the object frame as it rotates), contact sliding under a Coulomb
/// friction cone, and observation noise on the outcome.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "activepush/push_physics.hpp"
#include "activepush/random.hpp"
#include "activepush/se2.hpp"

namespace activepush {

struct GroundTruthConfig {
  double true_c = 0.05;
  double step_length = 1e-4;
  /// When false the pusher sticks to a body-fixed contact and direction,
  /// which reduces the simulator to an incremental integration of the prior.
  bool slip_enabled = true;
  /// Coulomb coefficient at the pusher contact.
  double mu_contact = 0.3;
  /// Standard deviation of outcome noise on (vx, vy, omega) of the tangent.
  std::array<double, 3> noise_std = {1e-3, 1e-3, 1e-2};
  std::uint64_t seed = 0;
};

inline void validate(const GroundTruthConfig& gt) {
  if (!(gt.step_length > 0.0)) throw std::invalid_argument("GroundTruthConfig: step_length must be positive");
  if (!(gt.true_c > 0.0)) throw std::invalid_argument("GroundTruthConfig: true_c must be positive");
  if (gt.mu_contact < 0.0) throw std::invalid_argument("GroundTruthConfig: mu_contact must be nonnegative");
  for (double s : gt.noise_std) {
    if (s < 0.0) throw std::invalid_argument("GroundTruthConfig: noise_std must be nonnegative");
  }
}

/// A labelled push.
struct Interaction {
  PushParams params;
  Pose2 outcome;
};

namespace detail {

/// Object twist per unit pusher travel at canonical contact (x_c, y_c) for unit
/// pusher velocity v (object frame). Sliding takes the friction-cone edge and
/// scales it so the contact's normal velocity matches the pusher.
inline Eigen::Vector3d contact_twist(double x_c, double y_c, const Eigen::Vector2d& v, double c, double mu,
                                     bool slip) {
  const Eigen::Vector3d stick = sticking_twist(x_c, y_c, v.x(), v.y(), c);
  if (!slip) return stick;
  // Force direction of the sticking solution (the limit surface maps force
  // (fx, fy, m) to twist (fx, fy, m / c^2)); the inward normal is -x.
  const double f_n = -stick[0];
  const double f_t = stick[1];
  if (std::abs(f_t) <= mu * f_n) return stick;
  const double fx = -1.0, fy = (f_t > 0.0 ? mu : -mu);
  const Eigen::Vector3d edge(fx, fy, (x_c * fy - y_c * fx) / (c * c));
  // Normal component (-x) of the contact point velocity for the edge twist.
  const double edge_normal = -(edge[0] - edge[2] * y_c);
  if (edge_normal <= 1e-12) return Eigen::Vector3d::Zero();
  const double kappa = -v.x() / edge_normal;
  return kappa * edge;
}

}  // namespace detail

/// Simulates push `p` and returns the observed relative transform.
inline Pose2 simulate_push(const PushParams& p, const ObjectSpec& obj, const GroundTruthConfig& gt,
                           std::uint64_t stream_seed) {
  validate(gt);
  const ContactFrame f = contact_frame(p, obj);
  const double depth = f.depth;
  const double width = f.half_length;
  const double c = gt.true_c;

  // Canonical frame: pushed face at x = depth, pusher moving along -x.
  double x = 0.0, y = 0.0, th = 0.0;
  Eigen::Vector2d pusher(depth, f.lateral);
  const Eigen::Vector2d dir(-1.0, 0.0);
  const long steps = static_cast<long>(std::ceil(p.distance / gt.step_length - 1e-9));
  const double h = steps > 0 ? p.distance / static_cast<double>(steps) : 0.0;
  for (long k = 0; k < steps; ++k) {
    Eigen::Vector3d twist;
    if (gt.slip_enabled) {
      const double ct = std::cos(th), st = std::sin(th);
      const Eigen::Vector2d rel = pusher - Eigen::Vector2d(x, y);
      const double lateral = -st * rel.x() + ct * rel.y();
      const Eigen::Vector2d v_body(ct * dir.x() + st * dir.y(), -st * dir.x() + ct * dir.y());
      if (std::abs(lateral) > width || v_body.x() >= 0.0) break;  // contact lost
      twist = detail::contact_twist(depth, lateral, v_body, c, gt.mu_contact, true);
    } else {
      twist = detail::contact_twist(depth, f.lateral, dir, c, gt.mu_contact, false);
    }
    const double ct = std::cos(th), st = std::sin(th);
    x += h * (ct * twist[0] - st * twist[1]);
    y += h * (st * twist[0] + ct * twist[1]);
    th += h * twist[2];
    pusher += h * dir;
  }

  Pose2 outcome = from_canonical({x, y, th}, f.quarter_turns);
  if (gt.noise_std[0] > 0.0 || gt.noise_std[1] > 0.0 || gt.noise_std[2] > 0.0) {
    Rng rng(stream_seed);
    Twist2 t = log(outcome);
    t.vx += gt.noise_std[0] * rng.normal();
    t.vy += gt.noise_std[1] * rng.normal();
    t.omega += gt.noise_std[2] * rng.normal();
    outcome = exp(t);
  }
  return outcome;
}

/// Per-index seed used by batch_simulate.
inline std::uint64_t batch_seed(std::uint64_t seed, std::size_t index) { return seed ^ static_cast<std::uint64_t>(index); }

inline std::vector<Interaction> batch_simulate(const std::vector<PushParams>& batch, const ObjectSpec& obj,
                                               const GroundTruthConfig& gt) {
  std::vector<Interaction> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.push_back({batch[i], simulate_push(batch[i], obj, gt, batch_seed(gt.seed, i))});
  }
  return out;
}

/// Uniform draw over the valid push box: side, offset within the face, distance.
inline PushParams sample_push(const ObjectSpec& obj, Rng& rng, double max_distance = kDefaultMaxPushDistance) {
  PushParams p;
  p.side = 1 + static_cast<int>(rng.uniform_index(kNumSides));
  const double half = face_half_length(obj, p.side);
  p.offset = rng.uniform(-half, half);
  p.distance = rng.uniform(0.0, max_distance);
  return p;
}

inline std::vector<PushParams> make_pool(std::size_t n, const ObjectSpec& obj, Rng& rng,
                                         double max_distance = kDefaultMaxPushDistance) {
  if (n < 1) throw std::invalid_argument("make_pool: n must be at least 1");
  std::vector<PushParams> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.push_back(sample_push(obj, rng, max_distance));
  return pool;
}

// Dataset CSV: side,offset,distance,dx,dy,dtheta

inline void write_dataset_csv(std::ostream& os, const std::vector<Interaction>& data) {
  os << "side,offset,distance,dx,dy,dtheta\n";
  char buf[256];
  for (const auto& d : data) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", d.params.side, d.params.offset,
                  d.params.distance, d.outcome.x, d.outcome.y, d.outcome.theta);
    os << buf;
  }
}

inline std::vector<Interaction> read_dataset_csv(std::istream& is) {
  std::vector<Interaction> data;
  std::string line;
  if (!std::getline(is, line)) return data;
  if (line.rfind("side,offset,distance,dx,dy,dtheta", 0) != 0) {
    throw std::runtime_error("dataset csv: unexpected header '" + line + "'");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    double v[6];
    for (int i = 0; i < 6; ++i) {
      if (!std::getline(ss, field, ',')) throw std::runtime_error("dataset csv: short row '" + line + "'");
      v[i] = std::stod(field);
    }
    Interaction it;
    it.params = {static_cast<int>(v[0]), v[1], v[2]};
    it.outcome = Pose2(v[3], v[4], v[5]);
    data.push_back(it);
  }
  return data;
}

}  // namespace activepush
