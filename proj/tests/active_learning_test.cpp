#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <tuple>

#include <gtest/gtest.h>

#include "activepush/active_learning.hpp"
#include "activepush/push_simulator.hpp"
#include "activepush/random.hpp"

using namespace activepush;

namespace {

NtkFeatures random_dense(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Eigen::MatrixXd rows(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) rows(i, j) = rng.normal();
  }
  return NtkFeatures::dense(std::move(rows));
}

NtkFeatures random_ntk(Eigen::Index n, std::uint64_t seed) {
  Mlp<double> net({3, 8, 8, 3});
  net.initialize(seed, false);
  Rng rng(derive_seed(seed, 1));
  Eigen::MatrixXd x(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) x(k, i) = rng.uniform(-1.0, 1.0);
  }
  return ntk_features(net, x);
}

std::vector<std::size_t> with(std::vector<std::size_t> base, const std::vector<std::size_t>& extra) {
  base.insert(base.end(), extra.begin(), extra.end());
  return base;
}

// Greedy forward to 2B then backward to B, recomputing the objective from
// scratch for every candidate.
std::vector<std::size_t> naive_bait(const NtkFeatures& u, const std::vector<std::size_t>& train,
                                    const std::vector<std::size_t>& pool, std::size_t batch, double sigma) {
  std::vector<std::size_t> s;
  const std::size_t n_forward = std::min(2 * batch, pool.size());
  while (s.size() < n_forward) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t pick = 0;
    for (std::size_t j : pool) {
      if (std::find(s.begin(), s.end(), j) != s.end()) continue;
      auto trial = s;
      trial.push_back(j);
      const double obj = bait_objective(u, with(train, trial), sigma);
      if (obj < best) {
        best = obj;
        pick = j;
      }
    }
    s.push_back(pick);
  }
  while (s.size() > batch) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t drop = 0;
    for (std::size_t j : pool) {
      const auto it = std::find(s.begin(), s.end(), j);
      if (it == s.end()) continue;
      auto trial = s;
      trial.erase(trial.begin() + (it - s.begin()));
      const double obj = bait_objective(u, with(train, trial), sigma);
      if (obj < best) {
        best = obj;
        drop = j;
      }
    }
    s.erase(std::find(s.begin(), s.end(), drop));
  }
  return s;
}

std::vector<std::size_t> iota_from(std::size_t start, std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), start);
  return v;
}

const ObjectSpec kBox{0.08, 0.105, 0.03};

Labeler ground_truth_labeler(std::uint64_t seed) {
  return [seed](const std::vector<PushParams>& batch, std::size_t round) {
    GroundTruthConfig gt;
    gt.true_c = kBox.friction_ratio_c;
    gt.seed = derive_seed(seed, round);
    return batch_simulate(batch, kBox, gt);
  };
}

struct LoopFixture {
  std::vector<PushParams> pool;
  std::vector<Interaction> validation;
  TrainConfig train;
};

LoopFixture loop_fixture(std::size_t pool_size) {
  LoopFixture f;
  Rng rng(21);
  f.pool = make_pool(pool_size, kBox, rng);
  GroundTruthConfig gt;
  gt.true_c = kBox.friction_ratio_c;
  gt.seed = 77;
  f.validation = batch_simulate(make_pool(100, kBox, rng), kBox, gt);
  f.train.epochs = 40;
  f.train.seed = 5;
  return f;
}

}  // namespace

TEST(Strategy, ParsesNames) {
  EXPECT_EQ(strategy_from_string("bait"), Strategy::kBait);
  EXPECT_EQ(strategy_from_string("active"), Strategy::kBait);
  EXPECT_EQ(strategy_from_string("random"), Strategy::kRandom);
  EXPECT_EQ(to_string(Strategy::kBait), "bait");
  EXPECT_THROW(strategy_from_string("greedy"), std::invalid_argument);
}

TEST(BaitObjective, EmptyConditioningIsPriorTrace) {
  Rng rng(1);
  const NtkFeatures u = random_dense(10, 4, rng);
  EXPECT_NEAR(bait_objective(u, {}, 0.1), u.self_kernel().sum(), 1e-12);
}

TEST(BaitAcquire, SingletonPool) {
  Rng rng(2);
  const NtkFeatures u = random_dense(1, 3, rng);
  const std::vector<std::size_t> pool{0};
  const BaitSelection sel = bait_acquire(u, {}, pool, 1, 0.1);
  EXPECT_EQ(sel.selected, pool);
}

TEST(BaitAcquire, BatchLimits) {
  Rng rng(3);
  const NtkFeatures u = random_dense(5, 3, rng);
  const auto pool = iota_from(0, 5);
  EXPECT_THROW(bait_acquire(u, {}, pool, 6, 0.1), std::invalid_argument);
  EXPECT_TRUE(bait_acquire(u, {}, pool, 0, 0.1).selected.empty());
  const BaitSelection all = bait_acquire(u, {}, pool, 5, 0.1);
  EXPECT_EQ(std::set<std::size_t>(all.selected.begin(), all.selected.end()).size(), 5u);
}

TEST(BaitAcquire, DuplicatePoolPicksOneCopyAndTheOther) {
  Eigen::MatrixXd rows(3, 2);
  rows << 1.0, 0.0, 1.0, 0.0, 0.0, 1.0;
  const NtkFeatures u = NtkFeatures::dense(rows);
  const auto pool = iota_from(0, 3);
  const BaitSelection sel = bait_acquire(u, {}, pool, 2, 0.1);
  const std::set<std::size_t> chosen(sel.selected.begin(), sel.selected.end());
  EXPECT_EQ(chosen.count(2), 1u);
  EXPECT_EQ(chosen.size(), 2u);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) {
      const std::vector<std::size_t> pair{a, b};
      best = std::min(best, bait_objective(u, pair, 0.1));
    }
  }
  EXPECT_NEAR(sel.objective_after, best, 1e-12);
}

TEST(BaitAcquire, MatchesNaiveGreedyOnDenseFeatures) {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n_train = static_cast<std::size_t>(rng.uniform_index(6));
    const std::size_t n_pool = 4 + static_cast<std::size_t>(rng.uniform_index(29));
    const std::size_t batch = 1 + static_cast<std::size_t>(rng.uniform_index(std::min<std::size_t>(4, n_pool)));
    const Eigen::Index dim = 2 + static_cast<Eigen::Index>(rng.uniform_index(8));
    const NtkFeatures u = random_dense(static_cast<Eigen::Index>(n_train + n_pool), dim, rng);
    const auto train = iota_from(0, n_train);
    const auto pool = iota_from(n_train, n_pool);
    const double sigma = 0.3;
    const BaitSelection sel = bait_acquire(u, train, pool, batch, sigma);
    EXPECT_EQ(sel.selected, naive_bait(u, train, pool, batch, sigma)) << "trial " << trial;
    EXPECT_NEAR(sel.objective_before, bait_objective(u, train, sigma), 1e-9);
  }
}

TEST(BaitAcquire, MatchesNaiveGreedyOnNtkFeatures) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const NtkFeatures u = random_ntk(24, seed);
    const auto train = iota_from(0, 4);
    const auto pool = iota_from(4, 20);
    const BaitSelection sel = bait_acquire(u, train, pool, 3, 1.0);
    EXPECT_EQ(sel.selected, naive_bait(u, train, pool, 3, 1.0)) << "seed " << seed;
  }
}

TEST(BaitAcquire, SelectionIsDistinctPoolSubsetAndReducesObjective) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const NtkFeatures u = random_dense(40, 5, rng);
    const auto train = iota_from(0, 10);
    const auto pool = iota_from(10, 30);
    const BaitSelection sel = bait_acquire(u, train, pool, 4, 0.2);
    ASSERT_EQ(sel.selected.size(), 4u);
    EXPECT_EQ(sel.forward.size(), 8u);
    const std::set<std::size_t> chosen(sel.selected.begin(), sel.selected.end());
    EXPECT_EQ(chosen.size(), 4u);
    for (std::size_t j : chosen) {
      EXPECT_GE(j, 10u);
      EXPECT_LT(j, 40u);
    }
    EXPECT_LE(sel.objective_after, sel.objective_before);
    EXPECT_NEAR(sel.objective_after, bait_objective(u, with(train, sel.selected), 0.2), 1e-9);
  }
}

TEST(BaitAcquire, BeatsAllPairAverageOnSmallPool) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const NtkFeatures u = random_dense(8, 3, rng);
    const auto pool = iota_from(0, 8);
    const BaitSelection sel = bait_acquire(u, {}, pool, 2, 0.2);
    double total = 0.0, best = std::numeric_limits<double>::infinity();
    int count = 0;
    for (std::size_t a = 0; a < 8; ++a) {
      for (std::size_t b = a + 1; b < 8; ++b) {
        const std::vector<std::size_t> pair{a, b};
        const double obj = bait_objective(u, pair, 0.2);
        total += obj;
        best = std::min(best, obj);
        ++count;
      }
    }
    EXPECT_LE(sel.objective_after, total / count);
    EXPECT_GE(sel.objective_after, best - 1e-12);
  }
}

TEST(BaitAcquire, BeatsRandomBatchesOnAverage) {
  Rng rng(7);
  const NtkFeatures u = random_ntk(60, 11);
  const auto train = iota_from(0, 10);
  const auto pool = iota_from(10, 50);
  const double sigma = 1.0;
  const BaitSelection sel = bait_acquire(u, train, pool, 5, sigma);
  double total = 0.0;
  for (int k = 0; k < 200; ++k) {
    auto shuffled = pool;
    rng.shuffle(shuffled.begin(), shuffled.end());
    shuffled.resize(5);
    total += bait_objective(u, with(train, shuffled), sigma);
  }
  EXPECT_LE(sel.objective_after, total / 200.0);
}

TEST(LearningLoop, ZeroRoundsReturnsInitialModel) {
  const LoopFixture f = loop_fixture(30);
  const DynamicsModel initial(ModelKind::kResidual, kBox, 1);
  AcquisitionConfig acq;
  acq.rounds = 0;
  const LearningResult r = active_learning_loop(initial, ground_truth_labeler(1), f.train, acq, f.pool, f.validation);
  ASSERT_EQ(r.models.size(), 1u);
  EXPECT_TRUE(r.metrics.empty());
  EXPECT_EQ(r.models[0].network().params(), initial.network().params());
  EXPECT_EQ(r.remaining_pool.size(), f.pool.size());
}

TEST(LearningLoop, BookkeepingMovesBatchesFromPoolToTraining) {
  const LoopFixture f = loop_fixture(40);
  for (Strategy s : {Strategy::kBait, Strategy::kRandom}) {
    AcquisitionConfig acq;
    acq.batch = 5;
    acq.rounds = 3;
    acq.strategy = s;
    acq.seed = 9;
    std::vector<std::size_t> rounds_seen;
    const Labeler base = ground_truth_labeler(2);
    const Labeler label = [&](const std::vector<PushParams>& b, std::size_t round) {
      rounds_seen.push_back(round);
      EXPECT_EQ(b.size(), 5u);
      return base(b, round);
    };
    const LearningResult r = active_learning_loop(DynamicsModel(ModelKind::kResidual, kBox, 1), label, f.train, acq,
                                                  f.pool, f.validation);
    EXPECT_EQ(rounds_seen, (std::vector<std::size_t>{1, 2, 3}));
    ASSERT_EQ(r.models.size(), 4u);
    ASSERT_EQ(r.metrics.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(r.metrics[k].round, k + 1);
      EXPECT_EQ(r.metrics[k].n_train, 5 * (k + 1));
      EXPECT_EQ(r.metrics[k].strategy, to_string(s));
      EXPECT_NEAR(r.metrics[k].validation_rmse, r.models[k + 1].rmse(f.validation), 1e-15);
    }
    EXPECT_EQ(r.train_data.size(), 15u);
    EXPECT_EQ(r.remaining_pool.size(), 25u);
    std::multiset<std::tuple<int, double, double>> all, rest;
    for (const auto& p : f.pool) all.insert({p.side, p.offset, p.distance});
    for (const auto& d : r.train_data) {
      const auto key = std::make_tuple(d.params.side, d.params.offset, d.params.distance);
      ASSERT_EQ(all.count(key), 1u);
      all.erase(all.find(key));
    }
    for (const auto& p : r.remaining_pool) rest.insert({p.side, p.offset, p.distance});
    EXPECT_EQ(all, rest);
  }
}

TEST(LearningLoop, StopsWhenPoolRunsOut) {
  const LoopFixture f = loop_fixture(12);
  AcquisitionConfig acq;
  acq.batch = 5;
  acq.rounds = 5;
  const LearningResult r = active_learning_loop(DynamicsModel(ModelKind::kResidual, kBox, 1), ground_truth_labeler(3),
                                                f.train, acq, f.pool, f.validation);
  EXPECT_EQ(r.metrics.size(), 2u);
  EXPECT_EQ(r.remaining_pool.size(), 2u);
}

TEST(LearningLoop, InitialTrainingDataIsKept) {
  const LoopFixture f = loop_fixture(20);
  const std::vector<Interaction> seed_data(f.validation.begin(), f.validation.begin() + 7);
  AcquisitionConfig acq;
  acq.batch = 4;
  acq.rounds = 1;
  const LearningResult r = active_learning_loop(DynamicsModel(ModelKind::kResidual, kBox, 1), ground_truth_labeler(4),
                                                f.train, acq, f.pool, f.validation, seed_data);
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].n_train, 11u);
  EXPECT_EQ(r.train_data.front().outcome.x, seed_data.front().outcome.x);
}

TEST(LearningLoop, DeterministicAcrossRuns) {
  const LoopFixture f = loop_fixture(30);
  AcquisitionConfig acq;
  acq.batch = 5;
  acq.rounds = 2;
  acq.seed = 3;
  auto run = [&] {
    return active_learning_loop(DynamicsModel(ModelKind::kResidual, kBox, 1), ground_truth_labeler(5), f.train, acq,
                                f.pool, f.validation);
  };
  const LearningResult a = run(), b = run();
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t k = 0; k < a.metrics.size(); ++k) EXPECT_EQ(a.metrics[k].validation_rmse, b.metrics[k].validation_rmse);
  EXPECT_EQ(a.models.back().network().params(), b.models.back().network().params());
}

TEST(LearningLoop, PhysicsModelFallsBackToRandomSelection) {
  const LoopFixture f = loop_fixture(20);
  AcquisitionConfig acq;
  acq.batch = 5;
  acq.rounds = 2;
  const LearningResult r = active_learning_loop(DynamicsModel(ModelKind::kPhysics, kBox), ground_truth_labeler(6),
                                                f.train, acq, f.pool, f.validation);
  ASSERT_EQ(r.metrics.size(), 2u);
  EXPECT_EQ(r.metrics[0].validation_rmse, r.metrics[1].validation_rmse);
}

TEST(LearningLoop, PinnedRandomStrategyMetrics) {
  const LoopFixture f = loop_fixture(40);
  AcquisitionConfig acq;
  acq.batch = 10;
  acq.rounds = 3;
  acq.strategy = Strategy::kRandom;
  acq.seed = 8;
  const LearningResult r = active_learning_loop(DynamicsModel(ModelKind::kResidual, kBox, 1), ground_truth_labeler(7),
                                                f.train, acq, f.pool, f.validation);
  ASSERT_EQ(r.metrics.size(), 3u);
  const double expected[3] = {0.23701561672930213, 0.14670796108047818, 0.11065515987966314};
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(r.metrics[k].validation_rmse, expected[k], 1e-7) << k;
}
