/// @file
/// Oracle and property suites run by `activepush verify` and the acceptance
/// test. Each suite checks the library against an independent computation.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "activepush/active_learning.hpp"
#include "activepush/mlp.hpp"
#include "activepush/ntk.hpp"
#include "activepush/push_physics.hpp"
#include "activepush/random.hpp"
#include "activepush/se2.hpp"

namespace activepush {

struct SuiteResult {
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct OracleSuite {
  std::string name;
  double time_limit_s = 0.0;
  std::function<SuiteResult(bool quick)> body;

  /// Runs the body and fails it if it exceeds the time limit.
  SuiteResult run(bool quick) const {
    const auto start = std::chrono::steady_clock::now();
    SuiteResult r = body(quick);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (r.seconds >= time_limit_s) {
      r.passed = false;
      r.detail += "; over the " + std::to_string(static_cast<int>(time_limit_s)) + " s limit";
    }
    return r;
  }
};

namespace oracle {

inline std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

// Explicit Euler over pushed length with the sticking twist solved directly
// from the contact velocity constraint and the ellipsoidal limit surface.
inline Pose2 euler_push(const PushParams& p, const ObjectSpec& obj, int steps) {
  const bool x_face = (p.side == 1 || p.side == 3);
  const double sign = (p.side == 1 || p.side == 2) ? 1.0 : -1.0;
  const double cx = x_face ? sign * obj.half_x : p.offset;
  const double cy = x_face ? p.offset : sign * obj.half_y;
  const double ux = x_face ? -sign : 0.0;
  const double uy = x_face ? 0.0 : -sign;
  const double c2 = obj.friction_ratio_c * obj.friction_ratio_c;
  // [vx - w cy, vy + w cx] = u with (vx, vy, w) = (fx, fy, (cx fy - cy fx) / c2).
  const double m00 = 1.0 + cy * cy / c2, m01 = -cx * cy / c2, m11 = 1.0 + cx * cx / c2;
  const double det = m00 * m11 - m01 * m01;
  const double fx = (m11 * ux - m01 * uy) / det, fy = (m00 * uy - m01 * ux) / det;
  const double w = (cx * fy - cy * fx) / c2;
  double x = 0.0, y = 0.0, th = 0.0;
  const double h = p.distance / steps;
  for (int k = 0; k < steps; ++k) {
    const double c = std::cos(th), s = std::sin(th);
    x += h * (c * fx - s * fy);
    y += h * (s * fx + c * fy);
    th += h * w;
  }
  return Pose2(x, y, th);
}

inline PushParams random_push(const ObjectSpec& obj, Rng& rng) {
  PushParams p;
  p.side = 1 + static_cast<int>(rng.uniform_index(4));
  const double half = face_half_length(obj, p.side);
  p.offset = rng.uniform(-half, half);
  p.distance = rng.uniform(0.0, kDefaultMaxPushDistance);
  return p;
}

// Gauss-Jordan inverse with partial pivoting.
inline Eigen::MatrixXd gauss_jordan_inverse(Eigen::MatrixXd a) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index col = 0; col < n; ++col) {
    Eigen::Index pivot = col;
    for (Eigen::Index r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    }
    a.row(col).swap(a.row(pivot));
    inv.row(col).swap(inv.row(pivot));
    const double p = a(col, col);
    a.row(col) /= p;
    inv.row(col) /= p;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col);
      a.row(r) -= f * a.row(col);
      inv.row(r) -= f * inv.row(col);
    }
  }
  return inv;
}

// K_qq - K_qt (K_tt + sigma^2 I)^-1 K_tq from explicit feature rows.
inline Eigen::MatrixXd dense_posterior(const Eigen::MatrixXd& train_rows, const Eigen::MatrixXd& query_rows,
                                       double sigma) {
  const Eigen::MatrixXd kqq = query_rows * query_rows.transpose();
  if (train_rows.rows() == 0) return kqq;
  const Eigen::MatrixXd kqt = query_rows * train_rows.transpose();
  Eigen::MatrixXd a = train_rows * train_rows.transpose();
  a.diagonal().array() += sigma * sigma;
  return kqq - kqt * gauss_jordan_inverse(a) * kqt.transpose();
}

inline Eigen::MatrixXd rows_of(const Eigen::MatrixXd& all, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), all.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline double dense_objective(const Eigen::MatrixXd& rows, const std::vector<std::size_t>& cond, double sigma) {
  return dense_posterior(rows_of(rows, cond), rows, sigma).trace();
}

// Forward greedy to 2B then backward greedy to B, recomputing the posterior
// from scratch for every candidate. Ties go to the earlier pool entry.
inline std::vector<std::size_t> naive_bait(const Eigen::MatrixXd& rows, const std::vector<std::size_t>& train,
                                           const std::vector<std::size_t>& pool, std::size_t batch, double sigma) {
  auto with = [&](const std::vector<std::size_t>& extra) {
    std::vector<std::size_t> c = train;
    c.insert(c.end(), extra.begin(), extra.end());
    return c;
  };
  std::vector<std::size_t> s;
  const std::size_t n_forward = std::min(2 * batch, pool.size());
  while (s.size() < n_forward) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t pick = 0;
    for (std::size_t j : pool) {
      if (std::find(s.begin(), s.end(), j) != s.end()) continue;
      auto trial = s;
      trial.push_back(j);
      const double obj = dense_objective(rows, with(trial), sigma);
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
      const double obj = dense_objective(rows, with(trial), sigma);
      if (obj < best) {
        best = obj;
        drop = j;
      }
    }
    s.erase(std::find(s.begin(), s.end(), drop));
  }
  return s;
}

inline std::vector<std::size_t> iota_from(std::size_t start, std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), start);
  return v;
}

inline Eigen::MatrixXd normal_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal();
  }
  return m;
}

inline Eigen::MatrixXd uniform_inputs(int dim, Eigen::Index n, Rng& rng) {
  Eigen::MatrixXd x(dim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int i = 0; i < dim; ++i) x(i, j) = rng.uniform(-1.0, 1.0);
  }
  return x;
}

// Network with random weights and biases so every parameter carries signal.
inline Mlp<double> random_network(std::uint64_t seed, const std::vector<int>& dims) {
  Mlp<double> net(dims, Activation::kTanh);
  net.initialize(seed, false);
  Rng rng(derive_seed(seed, 1));
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto b = net.bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = 0.3 * rng.normal();
  }
  return net;
}

}  // namespace oracle

/// exp/log round trip and left invariance of se2_mse.
inline SuiteResult geometry_suite(bool quick) {
  Rng rng(1);
  const int n = quick ? 10000 : 100000;
  const double max_angle = std::numbers::pi - 1e-6;
  double round_trip = 0.0, invariance = 0.0;
  for (int i = 0; i < n; ++i) {
    const Twist2 t{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-max_angle, max_angle)};
    const Twist2 back = log(exp(t));
    round_trip = std::max(round_trip, (back.vector() - t.vector()).cwiseAbs().maxCoeff());
    const Pose2 p(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-max_angle, max_angle));
    const Pose2 q = exp(log(p));
    round_trip = std::max({round_trip, std::abs(q.x - p.x), std::abs(q.y - p.y), std::abs(wrap_angle(q.theta - p.theta))});
    const Pose2 a(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-max_angle, max_angle));
    const Pose2 b(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-max_angle, max_angle));
    const Pose2 g(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-max_angle, max_angle));
    invariance = std::max(invariance, std::abs(se2_mse(g * a, g * b) - se2_mse(a, b)));
  }
  SuiteResult r;
  r.passed = round_trip <= 1e-9 && invariance <= 1e-10;
  r.detail = std::to_string(n) + " samples, round trip " + oracle::sci(round_trip) + ", invariance " +
             oracle::sci(invariance);
  return r;
}

/// Closed-form push against fine-step Euler, plus the exact degenerate cases.
inline SuiteResult physics_suite(bool quick) {
  Rng rng(2);
  const int n = quick ? 100 : 1000;
  const int steps = 100000;
  double euler_err = 0.0;
  for (int i = 0; i < n; ++i) {
    const ObjectSpec obj{rng.uniform(0.02, 0.10), rng.uniform(0.02, 0.10), rng.uniform(0.02, 0.2)};
    const PushParams p = oracle::random_push(obj, rng);
    const Pose2 got = analytic_push(p, obj);
    const Pose2 want = oracle::euler_push(p, obj, steps);
    euler_err = std::max({euler_err, std::abs(got.x - want.x), std::abs(got.y - want.y),
                          std::abs(wrap_angle(got.theta - want.theta))});
  }
  bool center_exact = true;
  double limit_err = 0.0;
  for (int i = 0; i < 200; ++i) {
    const ObjectSpec obj{rng.uniform(0.02, 0.10), rng.uniform(0.02, 0.10), rng.uniform(0.02, 0.2)};
    PushParams p = oracle::random_push(obj, rng);
    p.offset = 0.0;
    const Pose2 out = analytic_push(p, obj);
    const ContactFrame f = contact_frame(p, obj);
    center_exact = center_exact && out.x == p.distance * f.push_dir.x() && out.y == p.distance * f.push_dir.y() &&
                   out.theta == 0.0;
    const ObjectSpec stiff{obj.half_x, obj.half_y, 1e3};
    const PushParams q = oracle::random_push(stiff, rng);
    const Pose2 s = analytic_push(q, stiff);
    const ContactFrame g = contact_frame(q, stiff);
    limit_err = std::max({limit_err, std::abs(s.theta), std::abs(s.x - q.distance * g.push_dir.x()),
                          std::abs(s.y - q.distance * g.push_dir.y())});
  }
  SuiteResult r;
  r.passed = euler_err <= 1e-4 && center_exact && limit_err <= 1e-6;
  r.detail = std::to_string(n) + " pushes, Euler gap " + oracle::sci(euler_err) + ", center push " +
             (center_exact ? "exact" : "inexact") + ", c=1e3 gap " + oracle::sci(limit_err);
  return r;
}

/// Parameter gradients against central finite differences.
inline SuiteResult gradient_suite(bool quick) {
  Rng rng(3);
  const int nets = quick ? 3 : 10;
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < nets; ++trial) {
    const int in_dim = trial % 2 == 0 ? 3 : 6;
    Mlp<double> net = oracle::random_network(100 + static_cast<std::uint64_t>(trial), make_layer_dims(in_dim, 3));
    Eigen::VectorXd x(in_dim);
    for (int i = 0; i < in_dim; ++i) x[i] = rng.uniform(-1.0, 1.0);
    const Eigen::MatrixXd g = net.param_gradient(x);
    for (Eigen::Index k = 0; k < net.num_params(); ++k) {
      const double saved = net.params()[k];
      net.params()[k] = saved + h;
      const Eigen::VectorXd plus = net.forward(Eigen::MatrixXd(x));
      net.params()[k] = saved - h;
      const Eigen::VectorXd minus = net.forward(Eigen::MatrixXd(x));
      net.params()[k] = saved;
      const Eigen::VectorXd fd = (plus - minus) / (2 * h);
      for (int o = 0; o < 3; ++o) worst = std::max(worst, std::abs(g(o, k) - fd[o]) / std::max(1.0, std::abs(fd[o])));
    }
  }
  SuiteResult r;
  r.passed = worst <= 1e-4;
  r.detail = std::to_string(nets) + " networks, max relative error " + oracle::sci(worst);
  return r;
}

/// Posterior covariance against the dense formula, and incremental
/// conditioning against a rebuild.
inline SuiteResult gp_suite(bool quick) {
  Rng rng(4);
  double dense_err = 0.0;
  const int dense_trials = quick ? 50 : 500;
  for (int trial = 0; trial < dense_trials; ++trial) {
    const auto n_train = static_cast<Eigen::Index>(1 + rng.uniform_index(5));
    const auto n_query = static_cast<Eigen::Index>(1 + rng.uniform_index(5));
    const Eigen::MatrixXd t = oracle::normal_rows(n_train, 8, rng);
    const Eigen::MatrixXd q = oracle::normal_rows(n_query, 8, rng);
    const double sigma = 0.01 + rng.uniform();
    const KernelState ks(NtkFeatures::dense(t), sigma);
    const Eigen::MatrixXd want = oracle::dense_posterior(t, q, sigma);
    dense_err = std::max(dense_err, (ks.posterior_covariance(NtkFeatures::dense(q)) - want).cwiseAbs().maxCoeff());
  }
  // Same check on network tangent features of at most 5 points.
  for (int trial = 0; trial < (quick ? 5 : 20); ++trial) {
    const Mlp<double> net = oracle::random_network(200 + static_cast<std::uint64_t>(trial), make_layer_dims(3, 3));
    const auto n_train = static_cast<Eigen::Index>(1 + rng.uniform_index(5));
    const NtkFeatures t = ntk_features(net, oracle::uniform_inputs(3, n_train, rng));
    const NtkFeatures q = ntk_features(net, oracle::uniform_inputs(3, 5, rng));
    const KernelState ks(t, kDefaultNoiseSigma);
    const Eigen::MatrixXd want = oracle::dense_posterior(t.flat_gradients(), q.flat_gradients(), kDefaultNoiseSigma);
    const double scale = std::max(1.0, want.cwiseAbs().maxCoeff());
    dense_err = std::max(dense_err, (ks.posterior_covariance(q) - want).cwiseAbs().maxCoeff() / scale);
  }

  double incremental_err = 0.0;
  const int sequences = quick ? 20 : 100;
  const Mlp<double> net = oracle::random_network(300, make_layer_dims(3, 3));
  const NtkFeatures query = ntk_features(net, oracle::uniform_inputs(3, 10, rng));
  for (int trial = 0; trial < sequences; ++trial) {
    const auto total = static_cast<std::size_t>(2 + rng.uniform_index(30));
    const NtkFeatures pts = ntk_features(net, oracle::uniform_inputs(3, static_cast<Eigen::Index>(total), rng));
    KernelState inc(kDefaultNoiseSigma);
    std::size_t used = 0;
    while (used < total) {
      const std::size_t chunk = std::min<std::size_t>(1 + rng.uniform_index(5), total - used);
      inc = inc.condition(pts.select(oracle::iota_from(used, chunk)));
      used += chunk;
    }
    const KernelState rebuilt(pts, kDefaultNoiseSigma);
    incremental_err = std::max(
        incremental_err, (inc.posterior_covariance(query) - rebuilt.posterior_covariance(query)).cwiseAbs().maxCoeff());
  }
  SuiteResult r;
  r.passed = dense_err <= 1e-10 && incremental_err <= 1e-8;
  r.detail = "dense formula gap " + oracle::sci(dense_err) + ", incremental vs rebuild gap " +
             oracle::sci(incremental_err) + " over " + std::to_string(sequences) + " sequences";
  return r;
}

/// Forward-backward greedy selection against a from-scratch naive greedy, the
/// duplicate-pool example and a random-batch baseline.
inline SuiteResult bait_suite(bool quick) {
  Rng rng(5);
  const int trials = quick ? 10 : 60;
  int mismatches = 0, above_random = 0;
  for (int trial = 0; trial < trials; ++trial) {
    const auto n_train = static_cast<std::size_t>(rng.uniform_index(6));
    const auto n_pool = static_cast<std::size_t>(4 + rng.uniform_index(29));
    const auto batch = static_cast<std::size_t>(1 + rng.uniform_index(4));
    const double sigma = 0.3;
    Eigen::MatrixXd rows;
    if (trial % 3 == 2) {
      const Mlp<double> net = oracle::random_network(400 + static_cast<std::uint64_t>(trial), {3, 8, 8, 3});
      rows = ntk_features(net, oracle::uniform_inputs(3, static_cast<Eigen::Index>(n_train + n_pool), rng)).flat_gradients();
    } else {
      rows = oracle::normal_rows(static_cast<Eigen::Index>(n_train + n_pool),
                                 static_cast<Eigen::Index>(2 + rng.uniform_index(8)), rng);
    }
    const NtkFeatures u = NtkFeatures::dense(rows);
    const auto train = oracle::iota_from(0, n_train);
    const auto pool = oracle::iota_from(n_train, n_pool);
    const BaitSelection sel = bait_acquire(u, train, pool, batch, sigma);
    if (sel.selected != oracle::naive_bait(rows, train, pool, batch, sigma)) ++mismatches;

    std::vector<std::size_t> cond = train;
    cond.insert(cond.end(), sel.selected.begin(), sel.selected.end());
    const double chosen = oracle::dense_objective(rows, cond, sigma);
    double random_sum = 0.0;
    for (int k = 0; k < 200; ++k) {
      std::vector<std::size_t> shuffled = pool;
      for (std::size_t i = 0; i < batch; ++i) {
        std::swap(shuffled[i], shuffled[i + rng.uniform_index(shuffled.size() - i)]);
      }
      std::vector<std::size_t> c = train;
      c.insert(c.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(batch));
      random_sum += oracle::dense_objective(rows, c, sigma);
    }
    if (chosen > random_sum / 200.0) ++above_random;
  }

  // Two identical candidates and one orthogonal one: a batch of two takes one
  // copy and the orthogonal point.
  Eigen::MatrixXd dup(3, 2);
  dup << 1.0, 0.0, 1.0, 0.0, 0.0, 1.0;
  const BaitSelection d = bait_acquire(NtkFeatures::dense(dup), {}, oracle::iota_from(0, 3), 2, 0.1);
  const std::set<std::size_t> picked(d.selected.begin(), d.selected.end());
  const bool duplicate_ok = picked.size() == 2 && picked.count(2) == 1;

  SuiteResult r;
  r.passed = mismatches == 0 && above_random == 0 && duplicate_ok;
  r.detail = std::to_string(trials) + " instances, " + std::to_string(mismatches) + " selection mismatches, " +
             std::to_string(above_random) + " above the random-batch mean, duplicate example " +
             (duplicate_ok ? "holds" : "fails");
  return r;
}

inline std::vector<OracleSuite> oracle_suites() {
  return {
      {"geometry", 10.0, geometry_suite},
      {"physics", 30.0, physics_suite},
      {"gradient", 10.0, gradient_suite},
      {"gp", 30.0, gp_suite},
      {"bait", 60.0, bait_suite},
  };
}

}  // namespace activepush
