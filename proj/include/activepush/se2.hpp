/// @file
/// Planar rigid-body transforms: SE(2) group operations, exp/log maps,
/// Jacobians and the tangent-space squared error used as training loss.

#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/LU>

namespace activepush {

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double theta) {
  double wrapped = std::remainder(theta, 2.0 * std::numbers::pi);
  if (wrapped <= -std::numbers::pi) wrapped += 2.0 * std::numbers::pi;
  return wrapped;
}

/// Element of the Lie algebra se(2): translation part (vx, vy) and rotation.
struct Twist2 {
  double vx = 0.0;
  double vy = 0.0;
  double omega = 0.0;

  Eigen::Vector3d vector() const { return {vx, vy, omega}; }
  static Twist2 from_vector(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }
};

/// Element of SE(2). theta is kept in (-pi, pi] by every operation here.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}

  static Pose2 identity() { return {}; }
  Eigen::Vector3d vector() const { return {x, y, theta}; }

  Eigen::Matrix3d matrix() const {
    const double c = std::cos(theta), s = std::sin(theta);
    Eigen::Matrix3d m;
    m << c, -s, x, s, c, y, 0, 0, 1;
    return m;
  }

  /// Maps a point from this frame to the parent frame.
  Eigen::Vector2d transform(const Eigen::Vector2d& p) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {x + c * p.x() - s * p.y(), y + s * p.x() + c * p.y()};
  }
};

inline Pose2 compose(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  return {a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta};
}

inline Pose2 inverse(const Pose2& p) {
  const double c = std::cos(p.theta), s = std::sin(p.theta);
  return {-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta};
}

inline Pose2 operator*(const Pose2& a, const Pose2& b) { return compose(a, b); }

/// Relative transform a^-1 * b.
inline Pose2 between(const Pose2& a, const Pose2& b) { return compose(inverse(a), b); }

namespace detail {

constexpr double kSmallAngle = 1e-6;

/// sin(t)/t and (1 - cos(t))/t with Taylor branches near zero.
inline void sinc_terms(double t, double& a, double& b) {
  if (std::abs(t) < kSmallAngle) {
    const double t2 = t * t;
    a = 1.0 - t2 / 6.0;
    b = t / 2.0 - t * t2 / 24.0;
  } else {
    const double sh = std::sin(0.5 * t);
    a = std::sin(t) / t;
    b = 2.0 * sh * sh / t;
  }
}

}  // namespace detail

inline Pose2 exp(const Twist2& t) {
  double a, b;
  detail::sinc_terms(t.omega, a, b);
  return {a * t.vx - b * t.vy, b * t.vx + a * t.vy, t.omega};
}

inline Twist2 log(const Pose2& p) {
  const double theta = p.theta;
  const double half = 0.5 * theta;
  // V^-1 = [[h, half], [-half, h]] with h = half * cot(half).
  double h;
  if (std::abs(theta) < detail::kSmallAngle) {
    h = 1.0 - theta * theta / 12.0;
  } else {
    h = half * std::cos(half) / std::sin(half);
  }
  return {h * p.x + half * p.y, -half * p.x + h * p.y, theta};
}

/// Right Jacobian: exp(t + d) ~= exp(t) * exp(J_r(t) d).
inline Eigen::Matrix3d right_jacobian(const Twist2& t) {
  const double th = t.omega, r1 = t.vx, r2 = t.vy;
  double a, b;
  detail::sinc_terms(th, a, b);
  double c1, c2;
  if (std::abs(th) < 1e-3) {
    // (th r1 - r2 (1 - cos) - r1 sin) / th^2 and (r1 (1 - cos) + th r2 - r2 sin) / th^2
    c1 = -r2 / 2.0 + r1 * th / 6.0 + r2 * th * th / 24.0;
    c2 = r1 / 2.0 + r2 * th / 6.0 - r1 * th * th / 24.0;
  } else {
    const double s = std::sin(th), c = std::cos(th), th2 = th * th;
    c1 = (th * r1 - r2 + r2 * c - r1 * s) / th2;
    c2 = (r1 + th * r2 - r1 * c - r2 * s) / th2;
  }
  Eigen::Matrix3d j;
  j << a, b, c1, -b, a, c2, 0, 0, 1;
  return j;
}

/// Left Jacobian: exp(t + d) ~= exp(J_l(t) d) * exp(t).
inline Eigen::Matrix3d left_jacobian(const Twist2& t) {
  return right_jacobian({-t.vx, -t.vy, -t.omega});
}

/// Per-component weights on the tangent error. Unit weights by default.
struct Se2Weights {
  double translation = 1.0;
  double rotation = 1.0;
};

/// Squared weighted norm of log(pred^-1 * truth).
inline double se2_mse(const Pose2& pred, const Pose2& truth, const Se2Weights& w = {}) {
  const Twist2 e = log(between(pred, truth));
  return w.translation * (e.vx * e.vx + e.vy * e.vy) + w.rotation * e.omega * e.omega;
}

/// se2_mse(exp(xi), truth) together with its gradient with respect to xi.
inline double se2_mse_tangent(const Eigen::Vector3d& xi, const Pose2& truth, Eigen::Vector3d& grad,
                              const Se2Weights& w = {}) {
  const Twist2 pred_twist = Twist2::from_vector(xi);
  const Twist2 e = log(between(exp(pred_twist), truth));
  const Eigen::Vector3d ev = e.vector();
  const Eigen::Vector3d wv(w.translation, w.translation, w.rotation);
  // de/dxi = -J_l(e)^-1 J_r(xi)
  const Eigen::Matrix3d de = -left_jacobian(e).inverse() * right_jacobian(pred_twist);
  grad = 2.0 * de.transpose() * wv.cwiseProduct(ev);
  return ev.dot(wv.cwiseProduct(ev));
}

}  // namespace activepush
