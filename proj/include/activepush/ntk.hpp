/// @file
/// Empirical neural tangent kernel and the Gaussian-process posterior it
/// induces.
///
/// The kernel between two inputs is the parameter-gradient inner product
/// summed over the network outputs, k(x, x') = sum_o <grad f_o(x), grad f_o(x')>.
/// Posterior covariance given a conditioning set T with observation noise
/// sigma_d is K_qq - K_qT (K_TT + sigma_d^2 I)^-1 K_Tq.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "activepush/mlp.hpp"
#include "activepush/random.hpp"

namespace activepush {

inline constexpr double kDefaultNoiseSigma = 0.01;

/// Feature representation of a set of samples for the summed-output NTK.
/// Either explicit feature rows (dense), or the per-layer factorization of the
/// parameter gradients (factored), which gives the exact kernel without ever
/// forming the gradients.
class NtkFeatures {
 public:
  NtkFeatures() = default;

  static NtkFeatures dense(Eigen::MatrixXd rows) {
    NtkFeatures f;
    f.rows_ = std::move(rows);
    return f;
  }

  static NtkFeatures factored(std::vector<LayerFactors> layers) {
    if (layers.empty()) throw std::invalid_argument("NtkFeatures::factored: no layers");
    NtkFeatures f;
    f.layers_ = std::move(layers);
    f.factored_ = true;
    return f;
  }

  bool is_factored() const { return factored_; }
  const Eigen::MatrixXd& rows() const { return rows_; }
  const std::vector<LayerFactors>& layers() const { return layers_; }

  Eigen::Index size() const { return factored_ ? layers_.front().inputs.rows() : rows_.rows(); }
  bool empty() const { return size() == 0; }

  NtkFeatures select(std::span<const std::size_t> idx) const {
    auto pick = [&](const Eigen::MatrixXd& m) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
      return out;
    };
    if (!factored_) return dense(pick(rows_));
    std::vector<LayerFactors> layers(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers[l].inputs = pick(layers_[l].inputs);
      for (const auto& d : layers_[l].deltas) layers[l].deltas.push_back(pick(d));
    }
    return factored(std::move(layers));
  }

  static NtkFeatures concat(const NtkFeatures& a, const NtkFeatures& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.factored_ != b.factored_) throw std::invalid_argument("NtkFeatures::concat: representation mismatch");
    auto stack = [](const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
      if (top.cols() != bottom.cols()) throw std::invalid_argument("NtkFeatures::concat: width mismatch");
      Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
      out << top, bottom;
      return out;
    };
    if (!a.factored_) return dense(stack(a.rows_, b.rows_));
    if (a.layers_.size() != b.layers_.size()) throw std::invalid_argument("NtkFeatures::concat: layer mismatch");
    std::vector<LayerFactors> layers(a.layers_.size());
    for (std::size_t l = 0; l < a.layers_.size(); ++l) {
      layers[l].inputs = stack(a.layers_[l].inputs, b.layers_[l].inputs);
      for (std::size_t o = 0; o < a.layers_[l].deltas.size(); ++o) {
        layers[l].deltas.push_back(stack(a.layers_[l].deltas[o], b.layers_[l].deltas[o]));
      }
    }
    return factored(std::move(layers));
  }

  /// k(x, x) for every sample.
  Eigen::VectorXd self_kernel() const {
    if (!factored_) return rows_.rowwise().squaredNorm();
    Eigen::VectorXd k = Eigen::VectorXd::Zero(size());
    for (const auto& layer : layers_) {
      Eigen::VectorXd delta_sq = Eigen::VectorXd::Zero(size());
      for (const auto& d : layer.deltas) delta_sq += d.rowwise().squaredNorm();
      k.array() += delta_sq.array() * (layer.inputs.rowwise().squaredNorm().array() + 1.0);
    }
    return k;
  }

  /// Flattened per-output gradients concatenated over outputs, using the
  /// parameter layout of Mlp (per layer: column-major weights, then bias).
  Eigen::MatrixXd flat_gradients() const {
    if (!factored_) return rows_;
    const std::size_t n_out = layers_.front().deltas.size();
    Eigen::Index per_output = 0;
    for (const auto& l : layers_) per_output += l.inputs.cols() * l.deltas.front().cols() + l.deltas.front().cols();
    Eigen::MatrixXd g(size(), per_output * static_cast<Eigen::Index>(n_out));
    for (Eigen::Index i = 0; i < size(); ++i) {
      Eigen::Index col = 0;
      for (std::size_t o = 0; o < n_out; ++o) {
        for (const auto& l : layers_) {
          const Eigen::Index fan_in = l.inputs.cols(), fan_out = l.deltas[o].cols();
          for (Eigen::Index c = 0; c < fan_in; ++c) {
            for (Eigen::Index r = 0; r < fan_out; ++r) g(i, col++) = l.deltas[o](i, r) * l.inputs(i, c);
          }
          for (Eigen::Index r = 0; r < fan_out; ++r) g(i, col++) = l.deltas[o](i, r);
        }
      }
    }
    return g;
  }

 private:
  bool factored_ = false;
  Eigen::MatrixXd rows_;
  std::vector<LayerFactors> layers_;
};

/// Kernel block K(a, b).
inline Eigen::MatrixXd gram(const NtkFeatures& a, const NtkFeatures& b) {
  if (a.is_factored() != b.is_factored()) throw std::invalid_argument("gram: representation mismatch");
  if (a.empty() || b.empty()) return Eigen::MatrixXd::Zero(a.size(), b.size());
  if (!a.is_factored()) return a.rows() * b.rows().transpose();
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(a.size(), b.size());
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    const auto& la = a.layers()[l];
    const auto& lb = b.layers()[l];
    Eigen::MatrixXd deltas = Eigen::MatrixXd::Zero(a.size(), b.size());
    for (std::size_t o = 0; o < la.deltas.size(); ++o) deltas.noalias() += la.deltas[o] * lb.deltas[o].transpose();
    Eigen::MatrixXd inputs = la.inputs * lb.inputs.transpose();
    inputs.array() += 1.0;
    k.array() += deltas.array() * inputs.array();
  }
  return k;
}

/// Gradient sketch. sketch_dim == 0 keeps the exact kernel; otherwise the
/// flattened gradients are projected by a dense random sign matrix scaled by
/// 1/sqrt(sketch_dim).
struct SketchConfig {
  std::size_t sketch_dim = 0;
  std::uint64_t seed = 0;
};

inline NtkFeatures sketch_features(const NtkFeatures& f, const SketchConfig& cfg) {
  if (cfg.sketch_dim == 0) return f;
  const Eigen::MatrixXd g = f.flat_gradients();
  const auto m = static_cast<Eigen::Index>(cfg.sketch_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(g.rows(), m);
  constexpr Eigen::Index kBlock = 2048;
  Eigen::MatrixXd s(kBlock, m);
  for (Eigen::Index start = 0; start < g.cols(); start += kBlock) {
    const Eigen::Index width = std::min(kBlock, g.cols() - start);
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index c = 0; c < width; ++c) {
        const std::uint64_t h = splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(start + c) * 0x100000001B3ull +
                                                                 static_cast<std::uint64_t>(r)));
        s(c, r) = (h >> 63) ? scale : -scale;
      }
    }
    out.noalias() += g.middleCols(start, width) * s.topRows(width);
  }
  return NtkFeatures::dense(std::move(out));
}

/// NTK features of `net` at the columns of `inputs`.
inline NtkFeatures ntk_features(const Mlp<double>& net, const Eigen::MatrixXd& inputs, const SketchConfig& sketch = {}) {
  return sketch_features(NtkFeatures::factored(net.gradient_factors(inputs)), sketch);
}

inline Eigen::MatrixXd ntk_gram(const Mlp<double>& net, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                const SketchConfig& sketch = {}) {
  return gram(ntk_features(net, a, sketch), ntk_features(net, b, sketch));
}

namespace detail {

/// Lower Cholesky factor of `a`, retrying with diagonal jitter 1e-10 .. 1e-6.
inline Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& a, double* jitter_used = nullptr) {
  if (a.size() == 0) return a;
  double jitter = 0.0;
  for (int attempt = 0; attempt < 6; ++attempt) {
    Eigen::MatrixXd m = a;
    if (jitter > 0.0) m.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success && (llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all()) {
      if (jitter_used) *jitter_used = jitter;
      return llt.matrixL();
    }
    jitter = (jitter == 0.0) ? 1e-10 : jitter * 10.0;
  }
  throw std::runtime_error("kernel matrix is numerically singular even with 1e-6 jitter");
}

}  // namespace detail

/// Conditioning set of a GP with NTK prior, with the Cholesky factor of
/// A = K(T, T) + sigma_d^2 I. Immutable: condition() returns a new state.
class KernelState {
 public:
  explicit KernelState(double sigma_d = kDefaultNoiseSigma) : sigma_d_(sigma_d) {
    if (!(sigma_d >= 0.0)) throw std::invalid_argument("KernelState: sigma_d must be nonnegative");
  }

  KernelState(NtkFeatures train, double sigma_d = kDefaultNoiseSigma) : KernelState(sigma_d) {
    if (train.empty()) return;
    Eigen::MatrixXd a = gram(train, train);
    a.diagonal().array() += sigma_d_ * sigma_d_;
    chol_ = detail::robust_cholesky(a, &jitter_);
    train_ = std::move(train);
  }

  double sigma_d() const { return sigma_d_; }
  Eigen::Index size() const { return train_ ? train_->size() : 0; }
  bool empty() const { return size() == 0; }
  const NtkFeatures* train() const { return train_ ? &*train_ : nullptr; }
  const Eigen::MatrixXd& cholesky() const { return chol_; }
  double jitter() const { return jitter_; }

  /// L^-1 K(T, q).
  Eigen::MatrixXd whitened_cross(const NtkFeatures& query) const {
    Eigen::MatrixXd cross = gram(*train_, query);
    chol_.triangularView<Eigen::Lower>().solveInPlace(cross);
    return cross;
  }

  Eigen::MatrixXd posterior_covariance(const NtkFeatures& query) const {
    Eigen::MatrixXd prior = gram(query, query);
    if (empty() || query.empty()) return prior;
    const Eigen::MatrixXd v = whitened_cross(query);
    prior.noalias() -= v.transpose() * v;
    return prior;
  }

  /// Diagonal of posterior_covariance without forming the full matrix.
  /// Round-off below zero is clamped.
  Eigen::VectorXd posterior_variance(const NtkFeatures& query) const {
    Eigen::VectorXd var = query.self_kernel();
    if (!empty() && !query.empty()) var -= whitened_cross(query).colwise().squaredNorm().transpose();
    return var.cwiseMax(0.0);
  }

  /// Adds `points` to the conditioning set by a block Cholesky update.
  KernelState condition(const NtkFeatures& points) const {
    if (points.empty()) return *this;
    if (empty()) return KernelState(points, sigma_d_);
    const Eigen::Index n = size(), m = points.size();
    const Eigen::MatrixXd b = whitened_cross(points);
    Eigen::MatrixXd schur = gram(points, points);
    schur.diagonal().array() += sigma_d_ * sigma_d_;
    schur.noalias() -= b.transpose() * b;
    double extra_jitter = 0.0;
    const Eigen::MatrixXd l22 = detail::robust_cholesky(schur, &extra_jitter);
    KernelState out(sigma_d_);
    out.chol_ = Eigen::MatrixXd::Zero(n + m, n + m);
    out.chol_.topLeftCorner(n, n) = chol_;
    out.chol_.bottomLeftCorner(m, n) = b.transpose();
    out.chol_.bottomRightCorner(m, m) = l22;
    out.train_ = NtkFeatures::concat(*train_, points);
    out.jitter_ = std::max(jitter_, extra_jitter);
    return out;
  }

 private:
  double sigma_d_;
  std::optional<NtkFeatures> train_;
  Eigen::MatrixXd chol_;
  double jitter_ = 0.0;
};

/// Per-dimension standardization of tangent-space labels.
struct LabelScaler {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d scale = Eigen::Vector3d::Ones();

  Eigen::Vector3d transform(const Eigen::Vector3d& y) const { return (y - mean).cwiseQuotient(scale); }
  Eigen::Vector3d inverse(const Eigen::Vector3d& z) const { return z.cwiseProduct(scale) + mean; }

  /// Rows of `labels` are samples.
  Eigen::MatrixXd transform(const Eigen::MatrixXd& labels) const {
    return (labels.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& scaled) const {
    return (scaled.array().rowwise() * scale.transpose().array()).matrix().rowwise() + mean.transpose();
  }
};

/// Fits a LabelScaler to `labels` (samples x 3) and returns the scaled labels.
/// A dimension with zero variance keeps unit scale and is reported on std::clog.
inline std::pair<Eigen::MatrixXd, LabelScaler> scale_labels(const Eigen::MatrixXd& labels, bool warn = true) {
  if (labels.rows() == 0 || labels.cols() != 3) throw std::invalid_argument("scale_labels: need a nonempty n x 3 matrix");
  LabelScaler s;
  s.mean = labels.colwise().mean().transpose();
  for (int j = 0; j < 3; ++j) {
    const double var = (labels.col(j).array() - s.mean[j]).square().mean();
    if (var > 1e-300 && std::sqrt(var) > 1e-12 * std::max(1.0, std::abs(s.mean[j]))) {
      s.scale[j] = std::sqrt(var);
    } else {
      s.scale[j] = 1.0;
      if (warn) std::clog << "scale_labels: label dimension " << j << " has zero variance, using unit scale\n";
    }
  }
  return {s.transform(labels), s};
}

}  // namespace activepush
