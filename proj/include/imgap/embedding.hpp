#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "imgap/distributions.hpp"
#include "imgap/grid_env.hpp"
#include "imgap/nn.hpp"

namespace imgap {

struct EncoderConfig {
  std::vector<int> hidden{64, 32};
  int embedding_dim = 16;
  double tau_init = 0.1;
};

/// Separate teacher and student encoders mapping into one shared latent space,
/// plus the contrastive temperature kept in log space so it stays positive.
struct EncoderPair {
  Mlp teacher;
  Mlp student;
  double log_tau = std::log(0.1);

  double tau() const { return std::exp(log_tau); }

  static EncoderPair create(const EncoderConfig& cfg, Rng& rng) {
    auto sizes = [&](int in) {
      std::vector<int> s{in};
      s.insert(s.end(), cfg.hidden.begin(), cfg.hidden.end());
      s.push_back(cfg.embedding_dim);
      return s;
    };
    EncoderPair e{Mlp(sizes(kTeacherObsDim)), Mlp(sizes(kStudentObsDim)), std::log(cfg.tau_init)};
    e.teacher.init_orthogonal(rng, std::sqrt(2.0), 1.0);
    e.student.init_orthogonal(rng, std::sqrt(2.0), 1.0);
    return e;
  }
};

/// Forward state of one encoder over a batch.
struct Encoded {
  Matrix z;  ///< unit-norm rows
  NormalizedRows normalized;
  MlpCache cache;
};

inline Encoded encode_batch(const Mlp& enc, const Matrix& obs) {
  Encoded e;
  const Matrix raw = mlp_forward(enc, obs, &e.cache);
  e.normalized = l2_normalize_rows(raw);
  e.z = e.normalized.unit;
  return e;
}

/// Embedding of one observation row.
inline RowVector encode(const Mlp& enc, const Eigen::Ref<const RowVector>& obs) {
  return l2_normalize(mlp_forward(enc, obs).row(0));
}

/// Parameter gradient for an encoder given dL/dz on its unit-norm output.
inline Vector encoder_backward(const Encoded& e, const Matrix& dz) {
  return mlp_backward(e.cache, l2_normalize_rows_backward(e.normalized, dz)).params;
}

struct ContrastiveLoss {
  double loss = 0.0;
  Matrix d_teacher;
  Matrix d_student;
  double d_log_tau = 0.0;
};

/// Symmetric InfoNCE over N aligned pairs with dot-product similarity. Row i of
/// each side is the positive for row i of the other; every other row in the
/// batch is a negative.
inline ContrastiveLoss infonce_loss(const Matrix& zt, const Matrix& zs, double tau) {
  const Eigen::Index n = zt.rows();
  if (n < 1 || zs.rows() != n || zs.cols() != zt.cols()) throw std::invalid_argument("infonce_loss: batch mismatch");
  if (!(tau > 0.0) || !zt.allFinite() || !zs.allFinite()) throw std::invalid_argument("infonce_loss: non-finite input");
  const Matrix s = (zt * zs.transpose()) / tau;
  const Matrix log_p_row = log_softmax_rows(s);                         // teacher anchors
  const Matrix log_p_col = log_softmax_rows(s.transpose()).transpose();  // student anchors
  ContrastiveLoss out;
  out.loss = -(log_p_row.diagonal().sum() + log_p_col.diagonal().sum()) / (2.0 * static_cast<double>(n));
  Matrix ds = log_p_row.array().exp().matrix() + log_p_col.array().exp().matrix();
  ds.diagonal().array() -= 2.0;
  ds /= 2.0 * static_cast<double>(n);
  out.d_teacher = ds * zs / tau;
  out.d_student = ds.transpose() * zt / tau;
  out.d_log_tau = -(ds.array() * s.array()).sum();
  return out;
}

struct PairLoss {
  double loss = 0.0;
  Matrix d_first;
  Matrix d_second;
};

/// Negative mean dot product between aligned embeddings; in [-1, 1] for unit rows.
inline PairLoss alignment_loss(const Matrix& zt, const Matrix& zs) {
  const Eigen::Index n = zt.rows();
  if (n < 1 || zs.rows() != n) throw std::invalid_argument("alignment_loss: batch mismatch");
  const double inv_n = 1.0 / static_cast<double>(n);
  return {-(zt.array() * zs.array()).sum() * inv_n, -zs * inv_n, -zt * inv_n};
}

/// Negative mean cosine similarity between phase-start logits and current
/// logits, summed over the teacher and student streams. Gradients are with
/// respect to the current logits only.
inline PairLoss stability_loss(const Matrix& old_t, const Matrix& old_s, const Matrix& new_t, const Matrix& new_s) {
  const Eigen::Index n = new_t.rows();
  if (n < 1 || old_t.rows() != n || old_s.rows() != n || new_s.rows() != n) {
    throw std::invalid_argument("stability_loss: batch mismatch");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  PairLoss out{0.0, Matrix(new_t.rows(), new_t.cols()), Matrix(new_s.rows(), new_s.cols())};
  auto accumulate = [&](const Matrix& old_l, const Matrix& new_l, Matrix& grad) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double na = old_l.row(i).norm();
      const double nb = new_l.row(i).norm();
      if (!(na > 0.0) || !(nb > 0.0)) throw std::domain_error("stability_loss: zero-norm logits row");
      const double cos = old_l.row(i).dot(new_l.row(i)) / (na * nb);
      out.loss -= cos * inv_n;
      grad.row(i) = -inv_n * (old_l.row(i) / (na * nb) - cos * new_l.row(i) / (nb * nb));
    }
  };
  accumulate(old_t, new_t, out.d_first);
  accumulate(old_s, new_s, out.d_second);
  return out;
}

struct EmbeddingWeights {
  double contrastive = 1.0;
  double alignment = 1.0;
  double stability = 1.0;
};

struct EmbeddingLossResult {
  double total = 0.0;
  double contrastive = 0.0;
  double alignment = 0.0;
  double stability = 0.0;
  Vector grad_teacher;
  Vector grad_student;
  double grad_log_tau = 0.0;
};

/// Weighted sum of the contrastive, alignment and stability terms for one
/// minibatch. Stability runs the current embeddings through the policy; the
/// policy's own parameter gradients are discarded so only the encoders and
/// the temperature receive updates.
inline EmbeddingLossResult embedding_loss(const EncoderPair& enc, const Mlp& policy, const Matrix& obs_t,
                                          const Matrix& obs_s, const Matrix& old_logits_t,
                                          const Matrix& old_logits_s, const EmbeddingWeights& w = {}) {
  if (obs_t.rows() != obs_s.rows() || old_logits_t.rows() != obs_t.rows() ||
      old_logits_s.rows() != obs_t.rows()) {
    throw std::invalid_argument("embedding_loss: snapshot batch does not match observation batch");
  }
  const Encoded et = encode_batch(enc.teacher, obs_t);
  const Encoded es = encode_batch(enc.student, obs_s);

  EmbeddingLossResult r;
  Matrix dzt = Matrix::Zero(et.z.rows(), et.z.cols());
  Matrix dzs = Matrix::Zero(es.z.rows(), es.z.cols());

  const ContrastiveLoss c = infonce_loss(et.z, es.z, enc.tau());
  r.contrastive = c.loss;
  if (w.contrastive != 0.0) {
    dzt += w.contrastive * c.d_teacher;
    dzs += w.contrastive * c.d_student;
    r.grad_log_tau = w.contrastive * c.d_log_tau;
  }

  const PairLoss a = alignment_loss(et.z, es.z);
  r.alignment = a.loss;
  if (w.alignment != 0.0) {
    dzt += w.alignment * a.d_first;
    dzs += w.alignment * a.d_second;
  }

  if (w.stability != 0.0) {
    MlpCache ct;
    MlpCache cs;
    const Matrix lt = mlp_forward(policy, et.z, &ct);
    const Matrix ls = mlp_forward(policy, es.z, &cs);
    const PairLoss st = stability_loss(old_logits_t, old_logits_s, lt, ls);
    r.stability = st.loss;
    Vector discarded = Vector::Zero(policy.num_params());
    dzt += mlp_backward(ct, w.stability * st.d_first, discarded);
    dzs += mlp_backward(cs, w.stability * st.d_second, discarded);
  } else {
    const PairLoss st = stability_loss(old_logits_t, old_logits_s, mlp_forward(policy, et.z),
                                       mlp_forward(policy, es.z));
    r.stability = st.loss;
  }

  r.total = w.contrastive * r.contrastive + w.alignment * r.alignment + w.stability * r.stability;
  r.grad_teacher = encoder_backward(et, dzt);
  r.grad_student = encoder_backward(es, dzs);
  return r;
}

}  // namespace imgap
