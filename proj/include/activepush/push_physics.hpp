/// @file
/// Analytical quasi-static push model used as the physics prior.
///
/// The object is an oriented box pushed at a point on one of its faces. The
/// prior assumes perfect sticking contact with the contact point and pushing
/// direction fixed in the object frame, so every body-frame velocity is the
/// pusher speed times a constant. Under the ellipsoidal limit surface with
/// friction ratio c, pushing the +x face at (x_c, y_c) with pusher velocity
/// (v_px, v_py) gives
///
///   v_x   = ((c^2 + x_c^2) v_px + x_c y_c v_py) / (c^2 + x_c^2 + y_c^2)
///   v_y   = ((c^2 + y_c^2) v_py + x_c y_c v_px) / (c^2 + x_c^2 + y_c^2)
///   omega = (x_c v_y - y_c v_x) / c^2
///
/// Other faces are handled by rotating into this canonical frame and back.

#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "activepush/se2.hpp"

namespace activepush {

/// Faces are enumerated +x, +y, -x, -y in the object frame.
inline constexpr int kNumSides = 4;

/// A push: face index (1..4), lateral offset from the face center along the
/// body axis parallel to the face, and total pusher travel.
struct PushParams {
  int side = 1;
  double offset = 0.0;
  double distance = 0.0;
};

/// Footprint half-extents and the limit-surface friction ratio c.
struct ObjectSpec {
  double half_x = 0.08;
  double half_y = 0.05;
  double friction_ratio_c = 0.05;
};

/// Fixed-duration pusher velocity profile.
struct ProfileConfig {
  double duration_T = 3.0;
  int quadrature_steps = 512;
};

/// Prior friction ratio used for every object.
inline constexpr double kPriorFrictionRatio = 0.05;
inline constexpr double kDefaultMaxPushDistance = 0.15;

inline void validate(const ObjectSpec& obj) {
  if (!(obj.half_x > 0.0) || !(obj.half_y > 0.0) || !(obj.friction_ratio_c > 0.0)) {
    throw std::invalid_argument("ObjectSpec requires positive half extents and friction ratio");
  }
}

inline void validate(const ProfileConfig& cfg) {
  if (!(cfg.duration_T > 0.0) || cfg.quadrature_steps < 16) {
    throw std::invalid_argument("ProfileConfig requires duration_T > 0 and quadrature_steps >= 16");
  }
}

/// Half-length of face `side`, i.e. the admissible |offset|.
inline double face_half_length(const ObjectSpec& obj, int side) {
  return (side == 1 || side == 3) ? obj.half_y : obj.half_x;
}

/// Half-extent of the object along the inward normal of face `side`.
inline double face_depth(const ObjectSpec& obj, int side) {
  return (side == 1 || side == 3) ? obj.half_x : obj.half_y;
}

inline bool is_valid(const PushParams& p, const ObjectSpec& obj, double max_distance = kDefaultMaxPushDistance) {
  if (p.side < 1 || p.side > kNumSides) return false;
  if (std::abs(p.offset) > face_half_length(obj, p.side) * (1.0 + 1e-12)) return false;
  return p.distance >= 0.0 && p.distance <= max_distance * (1.0 + 1e-12);
}

/// v(t) = (d/T) [sin(2 pi t / T - pi/2) + 1], for t in [0, T].
inline double velocity_profile(double t, double d, const ProfileConfig& cfg = {}) {
  const double T = cfg.duration_T;
  if (t < 0.0 || t > T) throw std::out_of_range("velocity_profile: t outside [0, T]");
  return d / T * (std::sin(2.0 * std::numbers::pi * t / T - 0.5 * std::numbers::pi) + 1.0);
}

/// Pushed length u(t) = integral of v over [0, t].
inline double pushed_length(double t, double d, const ProfileConfig& cfg = {}) {
  const double T = cfg.duration_T;
  return d / T * (t - T / (2.0 * std::numbers::pi) * std::sin(2.0 * std::numbers::pi * t / T));
}

/// Contact geometry of a push in the object frame.
struct ContactFrame {
  Eigen::Vector2d contact;    ///< contact point, object frame
  Eigen::Vector2d push_dir;   ///< inward face normal, object frame
  double face_angle = 0.0;    ///< rotation from the canonical (+x face) frame to the object frame
  int quarter_turns = 0;      ///< face_angle in quarter turns
  double depth = 0.0;         ///< canonical x_c
  double lateral = 0.0;       ///< canonical y_c
  double half_length = 0.0;   ///< face half-length
};

inline ContactFrame contact_frame(const PushParams& p, const ObjectSpec& obj) {
  ContactFrame f;
  switch (p.side) {
    case 1: f.contact = {obj.half_x, p.offset}; f.push_dir = {-1.0, 0.0}; break;
    case 2: f.contact = {p.offset, obj.half_y}; f.push_dir = {0.0, -1.0}; break;
    case 3: f.contact = {-obj.half_x, p.offset}; f.push_dir = {1.0, 0.0}; break;
    case 4: f.contact = {p.offset, -obj.half_y}; f.push_dir = {0.0, 1.0}; break;
    default: throw std::invalid_argument("contact_frame: side must be in 1..4, got " + std::to_string(p.side));
  }
  f.quarter_turns = p.side - 1;
  f.face_angle = 0.5 * std::numbers::pi * f.quarter_turns;
  f.depth = face_depth(obj, p.side);
  f.lateral = (p.side == 2 || p.side == 3) ? -p.offset : p.offset;
  f.half_length = face_half_length(obj, p.side);
  return f;
}

/// Body-frame object twist per unit pusher travel for a sticking push on the
/// canonical face at (x_c, y_c) with unit pusher velocity (v_px, v_py).
inline Eigen::Vector3d sticking_twist(double x_c, double y_c, double v_px, double v_py, double c) {
  const double c2 = c * c;
  const double denom = c2 + x_c * x_c + y_c * y_c;
  const double vx = ((c2 + x_c * x_c) * v_px + x_c * y_c * v_py) / denom;
  const double vy = ((c2 + y_c * y_c) * v_py + x_c * y_c * v_px) / denom;
  const double omega = (x_c * vy - y_c * vx) / c2;
  return {vx, vy, omega};
}

/// Rates (alpha, beta, gamma) of the canonical-frame body twist per unit
/// pushed length under the fixed-contact prior.
inline Eigen::Vector3d push_rates(const ContactFrame& f, double c) {
  return sticking_twist(f.depth, f.lateral, -1.0, 0.0, c);
}

/// Rotates a canonical-frame relative transform by `quarter_turns` quarter
/// turns. The rotation is exact, so symmetric pushes stay symmetric.
inline Pose2 from_canonical(const Pose2& canon, int quarter_turns) {
  switch (((quarter_turns % 4) + 4) % 4) {
    case 1: return {-canon.y, canon.x, canon.theta};
    case 2: return {-canon.x, -canon.y, canon.theta};
    case 3: return {canon.y, -canon.x, canon.theta};
    default: return canon;
  }
}

/// Closed-form final pose for constant body rates over pushed length u.
inline Pose2 integrate_rates(const Eigen::Vector3d& rates, double u) {
  const double a = rates[0], b = rates[1], g = rates[2];
  const double gu = g * u;
  double sin_term, cos_term;  // sin(gu)/g, (1 - cos(gu))/g
  if (std::abs(gu) < 1e-6) {
    sin_term = u * (1.0 - gu * gu / 6.0);
    cos_term = u * (gu / 2.0 - gu * gu * gu / 24.0);
  } else {
    const double sh = std::sin(0.5 * gu);
    sin_term = std::sin(gu) / g;
    cos_term = 2.0 * sh * sh / g;
  }
  return {a * sin_term - b * cos_term, a * cos_term + b * sin_term, gu};
}

/// Relative transform of the object after push `p`, in closed form.
inline Pose2 analytic_push(const PushParams& p, const ObjectSpec& obj, const ProfileConfig& cfg = {}) {
  (void)cfg;  // the final pose depends only on the total pushed length
  const ContactFrame f = contact_frame(p, obj);
  const Pose2 canon = integrate_rates(push_rates(f, obj.friction_ratio_c), p.distance);
  return from_canonical(canon, f.quarter_turns);
}

/// Same transform, integrated over the velocity profile by composite Simpson
/// quadrature. Kept as an independent path to cross-check analytic_push.
inline Pose2 analytic_push_quadrature(const PushParams& p, const ObjectSpec& obj, const ProfileConfig& cfg = {}) {
  validate(cfg);
  const ContactFrame f = contact_frame(p, obj);
  const Eigen::Vector3d r = push_rates(f, obj.friction_ratio_c);
  const double T = cfg.duration_T;
  int n = cfg.quadrature_steps;
  if (n % 2 == 1) ++n;
  const double h = T / n;
  double x = 0.0, y = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = i * h;
    const double v = velocity_profile(std::min(t, T), p.distance, cfg);
    const double theta = r[2] * pushed_length(t, p.distance, cfg);
    const double wgt = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    x += wgt * v * (std::cos(theta) * r[0] - std::sin(theta) * r[1]);
    y += wgt * v * (std::sin(theta) * r[0] + std::cos(theta) * r[1]);
  }
  x *= h / 3.0;
  y *= h / 3.0;
  return from_canonical({x, y, r[2] * p.distance}, f.quarter_turns);
}

}  // namespace activepush
