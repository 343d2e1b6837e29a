#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "imgap/errors.hpp"
#include "imgap/random.hpp"

namespace imgap {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Activation : std::uint8_t { Tanh, Relu };

/// Dense multilayer perceptron. All weights and biases live in one flat vector
/// so optimizers, checkpoints and gradient checks treat it as a single array.
/// Layer l stores W_l (out x in, row-major) followed by b_l (out).
/// Hidden layers use `activation`; the output layer is linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> sizes, Activation activation = Activation::Tanh)
      : sizes_(std::move(sizes)), activation_(activation) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw std::invalid_argument("Mlp: sizes must be positive");
      offsets_.push_back(total);
      total += static_cast<std::size_t>(sizes_[l + 1]) * (sizes_[l] + 1);
    }
    params_ = Vector::Zero(static_cast<Eigen::Index>(total));
  }

  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return activation_; }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  Eigen::Index num_params() const { return params_.size(); }

  Eigen::Map<Matrix> weight(int l) { return weight_view(params_.data(), l); }
  Eigen::Map<const Matrix> weight(int l) const {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<RowVector> bias(int l) { return bias_view(params_.data(), l); }
  Eigen::Map<const RowVector> bias(int l) const {
    return {params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
  }

  /// Views into a gradient vector laid out like params().
  Eigen::Map<Matrix> weight_view(double* base, int l) const {
    return {base + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<RowVector> bias_view(double* base, int l) const {
    return {base + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
  }

  /// Orthogonal initialization scaled by `gain` for hidden layers and
  /// `output_gain` for the last layer; biases start at zero.
  void init_orthogonal(Rng& rng, double gain, double output_gain) {
    for (int l = 0; l < num_layers(); ++l) {
      const int rows = sizes_[l + 1];
      const int cols = sizes_[l];
      const int n = std::max(rows, cols);
      Matrix a(n, n);
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
      Eigen::HouseholderQR<Matrix> qr(a);
      Matrix q = qr.householderQ();
      // Sign fix makes the draw uniform over the orthogonal group.
      const Matrix r = qr.matrixQR();
      for (int j = 0; j < n; ++j)
        if (r(j, j) < 0) q.col(j) *= -1.0;
      const double g = (l + 1 == num_layers()) ? output_gain : gain;
      weight(l) = g * q.topLeftCorner(rows, cols);
      bias(l).setZero();
    }
  }

  bool all_finite() const { return params_.allFinite(); }

 private:
  std::vector<int> sizes_;
  Activation activation_ = Activation::Tanh;
  std::vector<std::size_t> offsets_;
  Vector params_;
};

/// Intermediate activations of a batched forward pass; rows are samples.
struct MlpCache {
  std::vector<Matrix> inputs;  ///< input to each layer
  std::vector<Matrix> hidden;  ///< post-activation output of each hidden layer
  const Mlp* net = nullptr;
  Eigen::Index num_params = 0;
};

inline double activate(Activation a, double v) {
  return a == Activation::Tanh ? std::tanh(v) : (v > 0.0 ? v : 0.0);
}

/// Batched forward pass; x is (batch x input_size).
inline Matrix mlp_forward(const Mlp& net, const Matrix& x, MlpCache* cache = nullptr) {
  if (x.cols() != net.input_size()) {
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(x.cols()) +
                                " columns, expected " + std::to_string(net.input_size()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->hidden.clear();
    cache->net = &net;
    cache->num_params = net.num_params();
  }
  Matrix h = x;
  for (int l = 0; l < net.num_layers(); ++l) {
    Matrix pre = h * net.weight(l).transpose();
    pre.rowwise() += net.bias(l);
    if (cache) cache->inputs.push_back(std::move(h));
    if (l + 1 < net.num_layers()) {
      if (net.activation() == Activation::Tanh) {
        h = pre.array().tanh().matrix();
      } else {
        h = pre.array().max(0.0).matrix();
      }
      if (cache) cache->hidden.push_back(h);
    } else {
      h = std::move(pre);
    }
  }
  return h;
}

inline Matrix mlp_forward(const Mlp& net, const Eigen::Ref<const RowVector>& x) {
  return mlp_forward(net, Matrix(x));
}

struct MlpGrads {
  Vector params;
  Matrix input;
};

/// Reverse pass for a cached forward. Parameter gradients are accumulated
/// into `grad` (sized like net.params()); returns d(loss)/d(input).
inline Matrix mlp_backward(const MlpCache& cache, const Matrix& dy, Vector& grad) {
  const Mlp* net = cache.net;
  if (net == nullptr || cache.inputs.size() != static_cast<std::size_t>(net->num_layers()) ||
      cache.num_params != net->num_params()) {
    throw std::logic_error("mlp_backward: stale or empty cache");
  }
  if (grad.size() != net->num_params()) grad = Vector::Zero(net->num_params());
  Matrix delta = dy;
  for (int l = net->num_layers() - 1; l >= 0; --l) {
    if (l + 1 < net->num_layers()) {
      const Matrix& h = cache.hidden[l];
      if (net->activation() == Activation::Tanh) {
        delta.array() *= (1.0 - h.array().square());
      } else {
        delta.array() *= (h.array() > 0.0).cast<double>();
      }
    }
    net->weight_view(grad.data(), l).noalias() += delta.transpose() * cache.inputs[l];
    net->bias_view(grad.data(), l) += delta.colwise().sum();
    delta = delta * net->weight(l);
  }
  return delta;
}

inline MlpGrads mlp_backward(const MlpCache& cache, const Matrix& dy) {
  MlpGrads g;
  g.params = Vector::Zero(cache.num_params);
  g.input = mlp_backward(cache, dy, g.params);
  return g;
}

/// Bias-corrected Adam over one flat parameter vector.
struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vector m;
  Vector v;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(Eigen::Index n, double learning_rate) : lr(learning_rate), m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

inline void adam_step(Vector& params, const Vector& grads, AdamState& s) {
  if (grads.size() != params.size() || s.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  if (!grads.allFinite()) throw RunError("adam_step: non-finite gradient");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

/// Rescales `g` in place so its L2 norm is at most `max_norm`; returns the original norm.
inline double clip_grad_norm(Vector& g, double max_norm) {
  const double n = g.norm();
  if (max_norm > 0.0 && n > max_norm) g *= max_norm / n;
  return n;
}

}  // namespace imgap
