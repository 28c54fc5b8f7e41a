/// @file
/// Fully connected network with all parameters in one flat vector, batched
/// forward/backward passes, per-output parameter gradients and the per-layer
/// factors (layer inputs and output sensitivities) that the NTK is built from.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "activepush/random.hpp"

namespace activepush {

enum class Activation { kTanh, kIdentity };

inline std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

/// Hidden widths of the dynamics network.
inline const std::vector<int> kHiddenLayers = {32, 64, 128, 64, 32};

inline std::vector<int> make_layer_dims(int input_dim, int output_dim, const std::vector<int>& hidden = kHiddenLayers) {
  std::vector<int> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);
  return dims;
}

/// Inputs and output sensitivities of one dense layer for a batch of samples.
/// For output o and sample i, the gradient of that output with respect to the
/// layer weights is deltas[o].row(i)^T * inputs.row(i) and with respect to
/// the bias it is deltas[o].row(i).
struct LayerFactors {
  Eigen::MatrixXd inputs;               // samples x fan_in
  std::vector<Eigen::MatrixXd> deltas;  // per output: samples x fan_out
};

template <typename Scalar>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  /// Activations of every layer for one batch, kept for the backward pass.
  struct Cache {
    std::vector<Matrix> act;  // act[0] = input, act[l + 1] = output of layer l
  };

  Mlp() = default;

  Mlp(std::vector<int> dims, Activation activation = Activation::kTanh)
      : dims_(std::move(dims)), activation_(activation) {
    if (dims_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output dims");
    Eigen::Index total = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      if (dims_[l] < 1 || dims_[l + 1] < 1) throw std::invalid_argument("Mlp layer dims must be positive");
      weight_offset_.push_back(total);
      total += static_cast<Eigen::Index>(dims_[l + 1]) * dims_[l];
      bias_offset_.push_back(total);
      total += dims_[l + 1];
    }
    params_ = Vector::Zero(total);
  }

  const std::vector<int>& dims() const { return dims_; }
  Activation activation() const { return activation_; }
  std::size_t num_layers() const { return dims_.size() - 1; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  Eigen::Index num_params() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  MatrixMap weight(std::size_t l) { return MatrixMap(params_.data() + weight_offset_[l], dims_[l + 1], dims_[l]); }
  ConstMatrixMap weight(std::size_t l) const {
    return ConstMatrixMap(params_.data() + weight_offset_[l], dims_[l + 1], dims_[l]);
  }
  VectorMap bias(std::size_t l) { return VectorMap(params_.data() + bias_offset_[l], dims_[l + 1]); }
  ConstVectorMap bias(std::size_t l) const { return ConstVectorMap(params_.data() + bias_offset_[l], dims_[l + 1]); }
  Eigen::Index weight_offset(std::size_t l) const { return weight_offset_[l]; }
  Eigen::Index bias_offset(std::size_t l) const { return bias_offset_[l]; }

  /// Fan-in scaled Gaussian weights, zero biases. The last layer is zeroed
  /// when `zero_last_layer` is set.
  void initialize(std::uint64_t seed, bool zero_last_layer = true) {
    Rng rng(seed);
    params_.setZero();
    for (std::size_t l = 0; l < num_layers(); ++l) {
      if (zero_last_layer && l + 1 == num_layers()) break;
      auto w = weight(l);
      const double scale = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(scale * rng.normal());
      }
    }
  }

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out(dims_, activation_);
    out.params() = params_.template cast<Other>();
    return out;
  }

  /// Forward pass over the columns of `x` (input_dim x batch).
  Matrix forward(const Matrix& x) const {
    Matrix a = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Matrix z = weight(l) * a;
      z.colwise() += bias(l);
      if (l + 1 < num_layers()) activate(z);
      a = std::move(z);
    }
    return a;
  }

  Matrix forward(const Matrix& x, Cache& cache) const {
    cache.act.resize(num_layers() + 1);
    cache.act[0] = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Matrix z = weight(l) * cache.act[l];
      z.colwise() += bias(l);
      if (l + 1 < num_layers()) activate(z);
      cache.act[l + 1] = std::move(z);
    }
    return cache.act.back();
  }

  /// Accumulates d(sum_i g_i . out_i)/d(params) into `grad`, where `grad_out`
  /// holds g_i as columns (output_dim x batch).
  void backward(const Cache& cache, const Matrix& grad_out, Vector& grad) const {
    if (grad.size() != num_params()) grad = Vector::Zero(num_params());
    Matrix delta = grad_out;
    for (std::size_t l = num_layers(); l-- > 0;) {
      MatrixMap(grad.data() + weight_offset_[l], dims_[l + 1], dims_[l]).noalias() += delta * cache.act[l].transpose();
      VectorMap(grad.data() + bias_offset_[l], dims_[l + 1]) += delta.rowwise().sum();
      if (l == 0) break;
      Matrix back = weight(l).transpose() * delta;
      apply_derivative(cache.act[l], back);
      delta = std::move(back);
    }
  }

  /// Gradient of every output with respect to all parameters at input `x`;
  /// row o is the flat gradient of output o.
  Matrix param_gradient(const Vector& x) const {
    Cache cache;
    forward(Matrix(x), cache);
    Matrix jac(output_dim(), num_params());
    for (int o = 0; o < output_dim(); ++o) {
      Vector g = Vector::Zero(num_params());
      Matrix seed = Matrix::Zero(output_dim(), 1);
      seed(o, 0) = Scalar(1);
      backward(cache, seed, g);
      jac.row(o) = g.transpose();
    }
    return jac;
  }

  /// Per-layer gradient factors for the columns of `x`.
  std::vector<LayerFactors> gradient_factors(const Matrix& x) const {
    Cache cache;
    forward(x, cache);
    const Eigen::Index n = x.cols();
    std::vector<LayerFactors> out(num_layers());
    for (std::size_t l = 0; l < num_layers(); ++l) {
      out[l].inputs = cache.act[l].transpose().template cast<double>();
      out[l].deltas.resize(output_dim());
    }
    for (int o = 0; o < output_dim(); ++o) {
      Matrix delta = Matrix::Zero(output_dim(), n);
      delta.row(o).setOnes();
      for (std::size_t l = num_layers(); l-- > 0;) {
        out[l].deltas[o] = delta.transpose().template cast<double>();
        if (l == 0) break;
        Matrix back = weight(l).transpose() * delta;
        apply_derivative(cache.act[l], back);
        delta = std::move(back);
      }
    }
    return out;
  }

 private:
  void activate(Matrix& z) const {
    if (activation_ == Activation::kTanh) z = z.array().tanh().matrix();
  }

  /// back *= f'(z) expressed through the activation value a = f(z).
  void apply_derivative(const Matrix& a, Matrix& back) const {
    if (activation_ == Activation::kTanh) back.array() *= (Scalar(1) - a.array().square());
  }

  std::vector<int> dims_;
  Activation activation_ = Activation::kTanh;
  std::vector<Eigen::Index> weight_offset_;
  std::vector<Eigen::Index> bias_offset_;
  Vector params_;
};

}  // namespace activepush
