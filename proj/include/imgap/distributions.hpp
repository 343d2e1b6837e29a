#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "imgap/nn.hpp"
#include "imgap/random.hpp"

namespace imgap {

/// Categorical distribution over a row of logits.
class CategoricalDist {
 public:
  explicit CategoricalDist(const Eigen::Ref<const RowVector>& logits) : logits_(logits) {
    if (!logits_.allFinite()) throw std::invalid_argument("CategoricalDist: non-finite logits");
    const double m = logits_.maxCoeff();
    const RowVector e = (logits_.array() - m).exp();
    const double z = e.sum();
    probs_ = e / z;
    log_probs_ = logits_.array() - m - std::log(z);
  }

  const RowVector& logits() const { return logits_; }
  const RowVector& probs() const { return probs_; }
  const RowVector& log_probs() const { return log_probs_; }
  int size() const { return static_cast<int>(logits_.size()); }

  double log_prob(int a) const { return log_probs_(a); }

  double entropy() const { return -(probs_.array() * log_probs_.array()).sum(); }

  int sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int i = 0; i < size(); ++i) {
      acc += probs_(i);
      if (u < acc) return i;
    }
    return size() - 1;
  }

  int argmax() const {
    Eigen::Index i;
    logits_.maxCoeff(&i);
    return static_cast<int>(i);
  }

 private:
  RowVector logits_;
  RowVector probs_;
  RowVector log_probs_;
};

/// Row-wise log-softmax.
inline Matrix log_softmax_rows(const Matrix& logits) {
  if (!logits.allFinite()) throw std::invalid_argument("log_softmax: non-finite logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

inline Matrix softmax_rows(const Matrix& logits) { return log_softmax_rows(logits).array().exp().matrix(); }

inline RowVector softmax(const Eigen::Ref<const RowVector>& logits) { return CategoricalDist(logits).probs(); }

/// KL(p || q) for probability rows; q must be positive wherever p is.
inline double kl_categorical(const Eigen::Ref<const RowVector>& p, const Eigen::Ref<const RowVector>& q) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) <= 0.0) continue;
    if (q(i) <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p(i) * (std::log(p(i)) - std::log(q(i)));
  }
  return kl;
}

/// KL between the distributions induced by two logit rows, computed in log space.
inline double kl_logits(const Eigen::Ref<const RowVector>& logits_p, const Eigen::Ref<const RowVector>& logits_q) {
  const CategoricalDist p(logits_p);
  const CategoricalDist q(logits_q);
  return (p.probs().array() * (p.log_probs().array() - q.log_probs().array())).sum();
}

inline RowVector l2_normalize(const Eigen::Ref<const RowVector>& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw std::domain_error("l2_normalize: zero-norm vector");
  return v / n;
}

/// Row-wise L2 normalization of a batch; keeps the norms for the backward pass.
struct NormalizedRows {
  Matrix unit;
  Vector norms;
};

inline NormalizedRows l2_normalize_rows(const Matrix& x) {
  NormalizedRows out{x, x.rowwise().norm()};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!(out.norms(i) > 0.0)) throw std::domain_error("l2_normalize: zero-norm row");
    out.unit.row(i) /= out.norms(i);
  }
  return out;
}

/// Gradient through z = u / |u| given dL/dz: (dz - z (z . dz)) / |u|.
inline Matrix l2_normalize_rows_backward(const NormalizedRows& fwd, const Matrix& dz) {
  Matrix du(dz.rows(), dz.cols());
  for (Eigen::Index i = 0; i < dz.rows(); ++i) {
    const double proj = fwd.unit.row(i).dot(dz.row(i));
    du.row(i) = (dz.row(i) - proj * fwd.unit.row(i)) / fwd.norms(i);
  }
  return du;
}

}  // namespace imgap
