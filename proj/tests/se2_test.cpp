#include <cmath>
#include <numbers>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "activepush/random.hpp"
#include "activepush/se2.hpp"

using namespace activepush;

namespace {

constexpr double kPi = std::numbers::pi;

void expect_pose_near(const Pose2& a, const Pose2& b, double tol) {
  EXPECT_NEAR(a.x, b.x, tol);
  EXPECT_NEAR(a.y, b.y, tol);
  EXPECT_NEAR(wrap_angle(a.theta - b.theta), 0.0, tol);
}

// Tangent vector read off the matrix logarithm of the homogeneous matrix.
Eigen::Vector3d matrix_log_oracle(const Pose2& p) {
  const Eigen::Matrix3d l = p.matrix().log();
  return {l(0, 2), l(1, 2), l(1, 0)};
}

Pose2 matrix_exp_oracle(const Twist2& t) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  m(0, 1) = -t.omega;
  m(1, 0) = t.omega;
  m(0, 2) = t.vx;
  m(1, 2) = t.vy;
  const Eigen::Matrix3d e = m.exp();
  return Pose2(e(0, 2), e(1, 2), std::atan2(e(1, 0), e(0, 0)));
}

}  // namespace

TEST(WrapAngle, MapsIntoHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3 * kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(2 * kPi + 0.1), 0.1, 1e-12);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double w = wrap_angle(rng.uniform(-50.0, 50.0));
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
  }
}

TEST(Compose, IdentityIsNeutral) {
  const Pose2 p(0.3, -0.2, 1.1);
  expect_pose_near(compose(Pose2::identity(), p), p, 0.0);
  expect_pose_near(compose(p, Pose2::identity()), p, 1e-15);
}

TEST(Compose, PureTranslationsAdd) { expect_pose_near(Pose2(1, 0, 0) * Pose2(1, 0, 0), Pose2(2, 0, 0), 0.0); }

TEST(Compose, QuarterTurnMapsXToY) { expect_pose_near(Pose2(0, 0, kPi / 2) * Pose2(1, 0, 0), Pose2(0, 1, kPi / 2), 1e-15); }

TEST(Compose, MatchesHomogeneousMatrixProduct) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Pose2 a(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-kPi, kPi));
    const Pose2 b(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-kPi, kPi));
    const Eigen::Matrix3d m = a.matrix() * b.matrix();
    expect_pose_near(a * b, Pose2(m(0, 2), m(1, 2), std::atan2(m(1, 0), m(0, 0))), 1e-12);
  }
}

TEST(Compose, InverseGivesIdentity) {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Pose2 p(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-kPi, kPi));
    expect_pose_near(p * inverse(p), Pose2::identity(), 1e-12);
    expect_pose_near(inverse(p) * p, Pose2::identity(), 1e-12);
  }
}

TEST(Log, IdentityIsZero) {
  const Twist2 t = log(Pose2::identity());
  EXPECT_EQ(t.vx, 0.0);
  EXPECT_EQ(t.vy, 0.0);
  EXPECT_EQ(t.omega, 0.0);
}

TEST(Log, ZeroRotationIsTranslation) {
  const Twist2 t = log(Pose2(1, 0, 0));
  EXPECT_DOUBLE_EQ(t.vx, 1.0);
  EXPECT_DOUBLE_EQ(t.vy, 0.0);
  EXPECT_DOUBLE_EQ(t.omega, 0.0);
}

TEST(Log, MatchesMatrixLogarithm) {
  const Pose2 p(1, 0, kPi / 2);
  const Eigen::Vector3d oracle = matrix_log_oracle(p);
  const Eigen::Vector3d got = log(p).vector();
  EXPECT_NEAR((got - oracle).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  // For (1, 0, pi/2): V^-1 (1, 0) = (pi/4, -pi/4).
  EXPECT_NEAR(got[0], kPi / 4, 1e-12);
  EXPECT_NEAR(got[1], -kPi / 4, 1e-12);

  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const Pose2 q(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3.0, 3.0));
    EXPECT_NEAR((log(q).vector() - matrix_log_oracle(q)).cwiseAbs().maxCoeff(), 0.0, 1e-9);
  }
}

TEST(Log, HandlesHalfTurn) {
  const Pose2 p(0.2, -0.1, kPi);
  const Twist2 t = log(p);
  EXPECT_TRUE(std::isfinite(t.vx) && std::isfinite(t.vy));
  expect_pose_near(exp(t), p, 1e-12);
}

TEST(Exp, ZeroIsIdentity) { expect_pose_near(exp({0, 0, 0}), Pose2::identity(), 0.0); }

TEST(Exp, PureRotation) { expect_pose_near(exp({0, 0, kPi / 2}), Pose2(0, 0, kPi / 2), 1e-15); }

TEST(Exp, MatchesMatrixExponential) {
  Rng rng(13);
  for (int i = 0; i < 500; ++i) {
    const Twist2 t{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3.0, 3.0)};
    expect_pose_near(exp(t), matrix_exp_oracle(t), 1e-12);
  }
  const Twist2 t{1, 0, kPi / 2};
  expect_pose_near(exp(t), matrix_exp_oracle(t), 1e-12);
  expect_pose_near(exp(log(Pose2(1, 0, kPi / 2))), Pose2(1, 0, kPi / 2), 1e-12);
}

TEST(ExpLog, RoundTripIncludingSmallAngles) {
  Rng rng(17);
  double worst = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double scale = (i % 4 == 0) ? 1e-7 : 1.0;
    const Twist2 t{rng.uniform(-1, 1), rng.uniform(-1, 1), scale * rng.uniform(-3.0, 3.0)};
    worst = std::max(worst, (log(exp(t)).vector() - t.vector()).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(ExpLog, TaylorBranchIsContinuous) {
  const double below = 0.999e-6, above = 1.001e-6;
  const Pose2 a = exp({0.3, -0.2, below}), b = exp({0.3, -0.2, above});
  EXPECT_NEAR(a.x, b.x, 1e-9);
  EXPECT_NEAR(a.y, b.y, 1e-9);
  const Twist2 la = log(Pose2(0.3, -0.2, below)), lb = log(Pose2(0.3, -0.2, above));
  EXPECT_NEAR(la.vx, lb.vx, 1e-9);
  EXPECT_NEAR(la.vy, lb.vy, 1e-9);
}

TEST(Jacobians, MatchFiniteDifferences) {
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    const double scale = (i % 5 == 0) ? 1e-4 : 1.0;
    const Twist2 t{rng.uniform(-1, 1), rng.uniform(-1, 1), scale * rng.uniform(-2.5, 2.5)};
    const Eigen::Matrix3d jr = right_jacobian(t), jl = left_jacobian(t);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d d = Eigen::Vector3d::Zero();
      d[k] = h;
      const Pose2 plus = exp(Twist2::from_vector(t.vector() + d));
      const Pose2 minus = exp(Twist2::from_vector(t.vector() - d));
      const Eigen::Vector3d right_fd = (log(between(exp(t), plus)).vector() - log(between(exp(t), minus)).vector()) / (2 * h);
      const Eigen::Vector3d left_fd =
          (log(plus * inverse(exp(t))).vector() - log(minus * inverse(exp(t))).vector()) / (2 * h);
      EXPECT_NEAR((right_fd - jr.col(k)).cwiseAbs().maxCoeff(), 0.0, 1e-7);
      EXPECT_NEAR((left_fd - jl.col(k)).cwiseAbs().maxCoeff(), 0.0, 1e-7);
    }
  }
}

TEST(Se2Mse, ZeroOnEqualPoses) {
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    const Pose2 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-kPi, kPi));
    EXPECT_NEAR(se2_mse(p, p), 0.0, 1e-24);
  }
}

TEST(Se2Mse, PureTranslationIsSquaredDistance) { EXPECT_NEAR(se2_mse(Pose2::identity(), Pose2(0.1, 0, 0)), 0.01, 1e-15); }

TEST(Se2Mse, MatchesMatrixLogOracle) {
  const Pose2 truth(0.1, 0.05, 0.3);
  EXPECT_NEAR(se2_mse(Pose2::identity(), truth), matrix_log_oracle(truth).squaredNorm(), 1e-12);
}

TEST(Se2Mse, NonnegativeAndLeftInvariant) {
  Rng rng(29);
  for (int i = 0; i < 2000; ++i) {
    const Pose2 a(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-kPi, kPi));
    const Pose2 b(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-kPi, kPi));
    const Pose2 g(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-kPi, kPi));
    const double base = se2_mse(a, b);
    EXPECT_GE(base, 0.0);
    EXPECT_NEAR(se2_mse(g * a, g * b), base, 1e-10);
  }
}

TEST(Se2Mse, RotationWeightScalesRotationTerm) {
  const Pose2 truth(0, 0, 0.2);
  EXPECT_NEAR(se2_mse(Pose2::identity(), truth, {1.0, 0.5}), 0.5 * 0.04, 1e-15);
}

TEST(Se2MseTangent, GradientMatchesFiniteDifferences) {
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d xi(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-1.0, 1.0));
    const Pose2 truth(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-1.0, 1.0));
    const Se2Weights w{1.0, 0.7};
    Eigen::Vector3d grad;
    const double value = se2_mse_tangent(xi, truth, grad, w);
    EXPECT_NEAR(value, se2_mse(exp(Twist2::from_vector(xi)), truth, w), 1e-14);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d d = Eigen::Vector3d::Zero();
      d[k] = h;
      const double fd = (se2_mse(exp(Twist2::from_vector(xi + d)), truth, w) -
                         se2_mse(exp(Twist2::from_vector(xi - d)), truth, w)) / (2 * h);
      EXPECT_NEAR(grad[k], fd, 1e-7);
    }
  }
}
