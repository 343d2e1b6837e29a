#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "imgap/distributions.hpp"
#include "imgap/errors.hpp"
#include "imgap/grid_env.hpp"
#include "imgap/nn.hpp"

namespace imgap {

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  int epochs = 4;
  int minibatch = 256;
  double lr = 3e-4;
  double max_grad_norm = 0.5;
  bool normalize_advantages = true;
  /// Decay lr linearly to zero over the run.
  bool anneal_lr = true;
  /// Bootstrap V(s) at the step limit instead of treating it as terminal.
  bool bootstrap_timeouts = false;
};

inline double annealed_lr(double base, std::int64_t iteration, std::int64_t iterations) {
  return base * (1.0 - static_cast<double>(iteration) / static_cast<double>(std::max<std::int64_t>(1, iterations)));
}

struct AdvantageSet {
  Vector advantages;
  Vector returns;
};

/// Generalized advantage estimation over one contiguous trajectory segment.
/// `values` has one more entry than `rewards`: the bootstrap value of the
/// state following the last step (ignored when that step is terminal).
inline AdvantageSet compute_gae(const Vector& rewards, const Vector& values, const std::vector<bool>& dones,
                                double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n + 1 || static_cast<Eigen::Index>(dones.size()) != n) {
    throw std::invalid_argument("compute_gae: length mismatch");
  }
  AdvantageSet out{Vector(n), Vector(n)};
  double next_adv = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards(t) + gamma * values(t + 1) * live - values(t);
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages(t) = next_adv;
  }
  out.returns = out.advantages + values.head(n);
  return out;
}

inline Vector normalize_advantages(const Vector& adv) {
  const double mean = adv.mean();
  const double var = (adv.array() - mean).square().mean();
  return (adv.array() - mean) / (std::sqrt(var) + 1e-8);
}

/// Clipped surrogate for one sample: min(r A, clip(r, 1-eps, 1+eps) A).
inline double clipped_objective(double ratio, double adv, double clip) {
  return std::min(ratio * adv, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv);
}

/// Optional KL(pi || target) penalty added to the policy loss, with target logits held fixed.
struct KlPenalty {
  const Matrix* target_logits = nullptr;
  double coef = 0.0;
};

struct PolicyLoss {
  double loss = 0.0;
  double surrogate = 0.0;
  double entropy = 0.0;
  double kl_penalty = 0.0;
  double clip_fraction = 0.0;
  Matrix d_logits;
};

/// Policy part of the PPO loss on a minibatch:
/// -mean(clipped surrogate) - c_e * mean(entropy) [+ coef * mean KL(pi || target)].
inline PolicyLoss ppo_policy_loss(const Matrix& logits, const std::vector<int>& actions, const Vector& old_logp,
                                  const Vector& adv, double clip, double entropy_coef, KlPenalty kl = {}) {
  const Eigen::Index n = logits.rows();
  if (static_cast<Eigen::Index>(actions.size()) != n || old_logp.size() != n || adv.size() != n) {
    throw std::invalid_argument("ppo_policy_loss: batch mismatch");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const Matrix logp = log_softmax_rows(logits);
  const Matrix p = logp.array().exp().matrix();
  Matrix target_logp;
  if (kl.target_logits != nullptr) target_logp = log_softmax_rows(*kl.target_logits);

  PolicyLoss out;
  out.d_logits = Matrix::Zero(n, logits.cols());
  int clipped = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = actions[i];
    const double ratio = std::exp(logp(i, a) - old_logp(i));
    const double obj = clipped_objective(ratio, adv(i), clip);
    out.surrogate -= obj * inv_n;
    // Gradient flows only through the unclipped branch when it is the active minimum.
    const bool active = ratio * adv(i) <= std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv(i);
    if (!active) ++clipped;
    if (active) {
      const double g = -ratio * adv(i) * inv_n;  // d(-obj/n)/d logp_a
      out.d_logits.row(i) -= g * p.row(i);
      out.d_logits(i, a) += g;
    }
    const double h = -(p.row(i).array() * logp.row(i).array()).sum();
    out.entropy += h * inv_n;
    // dH/dl_j = -p_j (log p_j + H)
    out.d_logits.row(i).array() += entropy_coef * inv_n * p.row(i).array() * (logp.row(i).array() + h);
    if (kl.target_logits != nullptr) {
      const RowVector diff = logp.row(i) - target_logp.row(i);
      const double k = (p.row(i).array() * diff.array()).sum();
      out.kl_penalty += k * inv_n;
      out.d_logits.row(i).array() += kl.coef * inv_n * p.row(i).array() * (diff.array() - k);
    }
  }
  out.loss = out.surrogate - entropy_coef * out.entropy + kl.coef * out.kl_penalty;
  out.clip_fraction = static_cast<double>(clipped) * inv_n;
  return out;
}

struct ValueLoss {
  double loss = 0.0;
  Matrix d_values;
};

/// c_v * mean((V - returns)^2); `values` is (n x 1).
inline ValueLoss ppo_value_loss(const Matrix& values, const Vector& returns, double value_coef) {
  const Eigen::Index n = values.rows();
  if (returns.size() != n || values.cols() != 1) throw std::invalid_argument("ppo_value_loss: batch mismatch");
  const Vector err = values.col(0) - returns;
  ValueLoss out;
  out.loss = value_coef * err.squaredNorm() / static_cast<double>(n);
  out.d_values = (2.0 * value_coef / static_cast<double>(n)) * err;
  return out;
}

/// Everything one PPO update consumes. Inputs are whatever the policy reads:
/// frozen teacher embeddings for the shared-space method, raw teacher
/// observations for the baselines.
struct PpoBatch {
  Matrix inputs;
  std::vector<int> actions;
  Vector old_logp;
  Vector advantages;
  Vector returns;
  std::optional<Matrix> value_inputs;      ///< critic inputs when they differ from `inputs`
  std::optional<Matrix> kl_target_logits;  ///< SITT student logits, one row per sample
  double kl_coef = 0.0;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double kl_penalty = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  /// Share of samples whose ratio lies in [1-2eps, 1+2eps] after the first epoch.
  double ratio_in_band_first_epoch = 1.0;
  /// 95th percentile of |ratio - 1| after the first epoch.
  double ratio_dev_p95_first_epoch = 0.0;
  int minibatches = 0;
};

inline Matrix gather_rows(const Matrix& m, const std::vector<int>& idx, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t k = begin; k < end; ++k) out.row(static_cast<Eigen::Index>(k - begin)) = m.row(idx[k]);
  return out;
}

inline Vector gather(const Vector& v, const std::vector<int>& idx, std::size_t begin, std::size_t end) {
  Vector out(static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) out(static_cast<Eigen::Index>(k - begin)) = v(idx[k]);
  return out;
}

/// Ratios pi(a|x) / pi_old(a|x) over the full batch.
inline Vector probability_ratios(const Mlp& policy, const PpoBatch& b) {
  const Matrix logp = log_softmax_rows(mlp_forward(policy, b.inputs));
  Vector r(b.inputs.rows());
  for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = std::exp(logp(i, b.actions[i]) - b.old_logp(i));
  return r;
}

/// Several epochs of shuffled minibatch descent on the PPO loss. Only `policy`
/// and `value` change; whatever produced `batch.inputs` is untouched.
inline PpoStats ppo_update(Mlp& policy, Mlp& value, AdamState& policy_opt, AdamState& value_opt,
                           const PpoBatch& batch, const PpoConfig& cfg, Rng& rng) {
  const Eigen::Index n = batch.inputs.rows();
  if (n == 0) throw std::invalid_argument("ppo_update: empty batch");
  const Vector adv = cfg.normalize_advantages ? normalize_advantages(batch.advantages) : batch.advantages;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = static_cast<std::size_t>(std::max(1, cfg.minibatch));

  PpoStats stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += mb) {
      const std::size_t end = std::min(order.size(), begin + mb);
      const Matrix x = gather_rows(batch.inputs, order, begin, end);
      std::vector<int> acts;
      acts.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) acts.push_back(batch.actions[order[k]]);

      MlpCache pc;
      MlpCache vc;
      const Matrix logits = mlp_forward(policy, x, &pc);
      const Matrix values =
          batch.value_inputs ? mlp_forward(value, gather_rows(*batch.value_inputs, order, begin, end), &vc)
                             : mlp_forward(value, x, &vc);
      Matrix kl_target;
      KlPenalty kl;
      if (batch.kl_target_logits) {
        kl_target = gather_rows(*batch.kl_target_logits, order, begin, end);
        kl = {&kl_target, batch.kl_coef};
      }
      const PolicyLoss pl = ppo_policy_loss(logits, acts, gather(batch.old_logp, order, begin, end),
                                            gather(adv, order, begin, end), cfg.clip, cfg.entropy_coef, kl);
      const ValueLoss vl = ppo_value_loss(values, gather(batch.returns, order, begin, end), cfg.value_coef);
      if (!std::isfinite(pl.loss) || !std::isfinite(vl.loss)) {
        throw RunError("ppo_update: non-finite loss (policy " + std::to_string(pl.loss) + ", value " +
                       std::to_string(vl.loss) + ")");
      }
      Vector gp = mlp_backward(pc, pl.d_logits).params;
      Vector gv = mlp_backward(vc, vl.d_values).params;
      clip_grad_norm(gp, cfg.max_grad_norm);
      clip_grad_norm(gv, cfg.max_grad_norm);
      adam_step(policy.params(), gp, policy_opt);
      adam_step(value.params(), gv, value_opt);

      stats.policy_loss += pl.surrogate;
      stats.value_loss += vl.loss;
      stats.entropy += pl.entropy;
      stats.kl_penalty += pl.kl_penalty;
      stats.clip_fraction += pl.clip_fraction;
      ++stats.minibatches;
    }
    if (epoch == 0) {
      const Vector r = probability_ratios(policy, batch);
      const double band = 2.0 * cfg.clip;
      std::vector<double> dev(static_cast<std::size_t>(r.size()));
      int inside = 0;
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        dev[i] = std::abs(r(i) - 1.0);
        if (dev[i] <= band) ++inside;
      }
      std::sort(dev.begin(), dev.end());
      stats.ratio_in_band_first_epoch = static_cast<double>(inside) / static_cast<double>(r.size());
      stats.ratio_dev_p95_first_epoch = dev[static_cast<std::size_t>(0.95 * static_cast<double>(dev.size() - 1))];
    }
  }
  const double m = static_cast<double>(std::max(1, stats.minibatches));
  stats.policy_loss /= m;
  stats.value_loss /= m;
  stats.entropy /= m;
  stats.kl_penalty /= m;
  stats.clip_fraction /= m;
  const Vector r = probability_ratios(policy, batch);
  stats.approx_kl = ((r.array() - 1.0) - r.array().log()).mean();
  return stats;
}

}  // namespace imgap
