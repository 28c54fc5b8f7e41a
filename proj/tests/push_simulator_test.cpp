#include <cmath>
#include <set>
#include <sstream>
#include <tuple>
#include <stdexcept>

#include <gtest/gtest.h>

#include "activepush/push_physics.hpp"
#include "activepush/push_simulator.hpp"
#include "activepush/random.hpp"

using namespace activepush;

namespace {

GroundTruthConfig noiseless(double c, bool slip) {
  GroundTruthConfig gt;
  gt.true_c = c;
  gt.slip_enabled = slip;
  gt.noise_std = {0.0, 0.0, 0.0};
  return gt;
}

double max_field_error(const Pose2& a, const Pose2& b) {
  return std::max({std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(wrap_angle(a.theta - b.theta))});
}

}  // namespace

TEST(SimulatePush, ZeroDistanceIsIdentity) {
  const ObjectSpec obj;
  for (bool slip : {false, true}) {
    const Pose2 p = simulate_push({2, 0.01, 0.0}, obj, noiseless(0.03, slip), 1);
    EXPECT_EQ(p.x, 0.0);
    EXPECT_EQ(p.y, 0.0);
    EXPECT_EQ(p.theta, 0.0);
  }
}

TEST(SimulatePush, StickingCenterPushMatchesPrior) {
  const ObjectSpec obj{0.08, 0.05, 0.05};
  const GroundTruthConfig gt = noiseless(0.05, false);
  for (int side = 1; side <= 4; ++side) {
    const PushParams p{side, 0.0, 0.13};
    const Pose2 sim = simulate_push(p, obj, gt, 0), prior = analytic_push(p, obj);
    EXPECT_NEAR(sim.x, prior.x, 2 * gt.step_length);
    EXPECT_NEAR(sim.y, prior.y, 2 * gt.step_length);
  }
}

TEST(SimulatePush, StickingReductionConvergesFirstOrder) {
  const ObjectSpec obj{0.08, 0.05, 0.05};
  const PushParams p{1, 0.03, 0.1};
  const Pose2 prior = analytic_push(p, obj);
  GroundTruthConfig coarse = noiseless(0.05, false), fine = coarse;
  coarse.step_length = 1e-3;
  fine.step_length = 1e-4;
  const double e_coarse = max_field_error(simulate_push(p, obj, coarse, 0), prior);
  const double e_fine = max_field_error(simulate_push(p, obj, fine, 0), prior);
  EXPECT_GT(e_coarse, 0.0);
  EXPECT_LT(e_fine, e_coarse);
  const double ratio = e_coarse / e_fine;
  EXPECT_GT(ratio, 7.0);
  EXPECT_LT(ratio, 13.0);
}

TEST(SimulatePush, FrictionMismatchLeavesPinnedResidual) {
  const ObjectSpec obj{0.08, 0.05, 0.05};
  const PushParams p{1, 0.03, 0.1};
  const Pose2 sim = simulate_push(p, obj, noiseless(0.02, true), 0);
  const Pose2 prior = analytic_push(p, obj);
  const double residual = std::sqrt(se2_mse(prior, sim));
  EXPECT_GT(residual, 1e-3);
  EXPECT_NEAR(residual, 0.389798276423578, 1e-9);
}

TEST(SimulatePush, SlidingDiffersFromStickingAtLargeOffset) {
  const ObjectSpec obj{0.08, 0.05, 0.05};
  const PushParams p{1, 0.045, 0.12};
  const Pose2 slide = simulate_push(p, obj, noiseless(0.05, true), 0);
  const Pose2 stick = simulate_push(p, obj, noiseless(0.05, false), 0);
  EXPECT_GT(max_field_error(slide, stick), 1e-3);
}

TEST(SimulatePush, CenterPushWithSlipStillTranslatesStraight) {
  const ObjectSpec obj{0.08, 0.05, 0.05};
  const Pose2 out = simulate_push({3, 0.0, 0.1}, obj, noiseless(0.03, true), 0);
  EXPECT_NEAR(out.x, 0.1, 2e-4);
  EXPECT_NEAR(out.y, 0.0, 1e-12);
  EXPECT_NEAR(out.theta, 0.0, 1e-12);
}

TEST(SimulatePush, DeterministicGivenSeed) {
  const ObjectSpec obj{0.045, 0.045, 0.05};
  GroundTruthConfig gt;
  gt.true_c = 0.03;
  const PushParams p{4, -0.02, 0.09};
  const Pose2 a = simulate_push(p, obj, gt, 99), b = simulate_push(p, obj, gt, 99);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.theta, b.theta);
  const Pose2 c = simulate_push(p, obj, gt, 100);
  EXPECT_NE(a.x, c.x);
}

TEST(SimulatePush, DisplacementBoundedByTravelPlusDiagonal) {
  const ObjectSpec obj{0.09, 0.025, 0.05};
  Rng rng(53);
  for (double c : {0.01, 0.03, 0.12}) {
    GroundTruthConfig gt;
    gt.true_c = c;
    for (int i = 0; i < 300; ++i) {
      const PushParams p = sample_push(obj, rng);
      const Pose2 out = simulate_push(p, obj, gt, static_cast<std::uint64_t>(i));
      const double bound = p.distance + 2.0 * std::hypot(obj.half_x, obj.half_y);
      EXPECT_LE(std::hypot(out.x, out.y), bound);
      EXPECT_TRUE(std::isfinite(out.theta));
    }
  }
}

TEST(SimulatePush, NoiseHasConfiguredSpreadInTangentSpace) {
  const ObjectSpec obj{0.08, 0.05, 0.05};
  GroundTruthConfig gt;
  gt.true_c = 0.03;
  gt.noise_std = {2e-3, 1e-3, 1e-2};
  const PushParams p{1, 0.02, 0.1};
  const Eigen::Vector3d clean = log(simulate_push(p, obj, noiseless(0.03, true), 0)).vector();
  const int n = 4000;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d e = log(simulate_push(p, obj, gt, static_cast<std::uint64_t>(i))).vector() - clean;
    mean += e;
    sq += e.cwiseProduct(e);
  }
  mean /= n;
  const Eigen::Vector3d sd = (sq / n - mean.cwiseProduct(mean)).cwiseSqrt();
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(mean[k], 0.0, 4.0 * gt.noise_std[k] / std::sqrt(n));
    EXPECT_NEAR(sd[k] / gt.noise_std[k], 1.0, 0.06);
  }
}

TEST(SimulatePush, RejectsBadConfig) {
  const ObjectSpec obj;
  GroundTruthConfig gt;
  gt.step_length = 0.0;
  EXPECT_THROW(simulate_push({1, 0, 0.1}, obj, gt, 0), std::invalid_argument);
  gt = {};
  gt.noise_std = {-1.0, 0.0, 0.0};
  EXPECT_THROW(simulate_push({1, 0, 0.1}, obj, gt, 0), std::invalid_argument);
}

TEST(BatchSimulate, EmptyBatchGivesEmptyList) {
  EXPECT_TRUE(batch_simulate({}, ObjectSpec{}, GroundTruthConfig{}).empty());
}

TEST(BatchSimulate, IdenticalNoiselessPushesGiveIdenticalOutcomes) {
  const std::vector<PushParams> batch(5, PushParams{2, 0.01, 0.08});
  const auto out = batch_simulate(batch, ObjectSpec{}, noiseless(0.03, true));
  for (const auto& it : out) {
    EXPECT_EQ(it.outcome.x, out.front().outcome.x);
    EXPECT_EQ(it.outcome.theta, out.front().outcome.theta);
  }
}

TEST(BatchSimulate, MatchesSequentialLoopBitExact) {
  const ObjectSpec obj{0.08, 0.105, 0.05};
  GroundTruthConfig gt;
  gt.true_c = 0.03;
  gt.seed = 12345;
  gt.step_length = 1e-3;
  Rng rng(59);
  const auto batch = make_pool(1000, obj, rng);
  const auto out = batch_simulate(batch, obj, gt);
  ASSERT_EQ(out.size(), batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Pose2 ref = simulate_push(batch[i], obj, gt, gt.seed ^ static_cast<std::uint64_t>(i));
    EXPECT_EQ(out[i].params.side, batch[i].side);
    EXPECT_EQ(out[i].outcome.x, ref.x);
    EXPECT_EQ(out[i].outcome.y, ref.y);
    EXPECT_EQ(out[i].outcome.theta, ref.theta);
  }
}

TEST(MakePool, DrawsValidPushes) {
  const ObjectSpec obj{0.08, 0.105, 0.05};
  Rng rng(61);
  const auto pool = make_pool(1000, obj, rng);
  ASSERT_EQ(pool.size(), 1000u);
  std::set<int> sides;
  for (const auto& p : pool) {
    EXPECT_TRUE(is_valid(p, obj));
    sides.insert(p.side);
  }
  EXPECT_EQ(sides.size(), 4u);
  Rng one(1);
  EXPECT_EQ(make_pool(1, obj, one).size(), 1u);
  EXPECT_THROW(make_pool(0, obj, one), std::invalid_argument);
}

TEST(MakePool, DisjointSeedsGiveDifferentSets) {
  const ObjectSpec obj;
  Rng a(derive_seed(7, 0)), b(derive_seed(7, 1));
  const auto pool = make_pool(1000, obj, a);
  const auto val = make_pool(800, obj, b);
  std::set<std::tuple<int, double, double>> seen;
  for (const auto& p : pool) seen.insert({p.side, p.offset, p.distance});
  for (const auto& p : val) EXPECT_EQ(seen.count({p.side, p.offset, p.distance}), 0u);
}

TEST(DatasetCsv, RoundTripsExactly) {
  const ObjectSpec obj;
  GroundTruthConfig gt;
  gt.seed = 3;
  Rng rng(67);
  const auto data = batch_simulate(make_pool(50, obj, rng), obj, gt);
  std::stringstream ss;
  write_dataset_csv(ss, data);
  const auto back = read_dataset_csv(ss);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].params.side, data[i].params.side);
    EXPECT_EQ(back[i].params.offset, data[i].params.offset);
    EXPECT_EQ(back[i].params.distance, data[i].params.distance);
    EXPECT_EQ(back[i].outcome.x, data[i].outcome.x);
    EXPECT_EQ(back[i].outcome.y, data[i].outcome.y);
    EXPECT_EQ(back[i].outcome.theta, data[i].outcome.theta);
  }
}

TEST(DatasetCsv, RejectsForeignHeader) {
  std::stringstream ss("a,b,c\n1,2,3\n");
  EXPECT_THROW(read_dataset_csv(ss), std::runtime_error);
}
