#pragma once

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <vector>

#include "imgap/curves.hpp"
#include "imgap/distributions.hpp"
#include "imgap/evaluation.hpp"
#include "imgap/nn.hpp"
#include "imgap/ppo.hpp"
#include "imgap/rollout.hpp"
#include "imgap/trainer.hpp"

namespace imgap {

/// Network and optimizer settings shared by the two baselines.
struct BaselineNets {
  std::vector<int> policy_hidden{64, 64};
  std::vector<int> value_hidden{64, 64};
  std::vector<int> student_hidden{64, 64};
  PpoConfig ppo;
  double policy_output_gain = 0.01;
  double student_lr = 1e-3;
  int student_minibatch = 256;
  int num_envs = 8;
  int rollout_steps = 2048;
};

struct BcConfig {
  /// Share of the budget spent on teacher RL; the rest collects the dataset.
  double teacher_fraction = 0.9;
  int student_epochs = 30;
  double teacher_warn_threshold = 0.95;
};

struct SittConfig {
  double alpha = 0.1;
  std::vector<double> sweep{0.01, 0.05, 0.1, 0.5};
  int student_epochs = 2;
};

/// PPO teacher acting on raw privileged observations, with no encoder.
struct RawTeacher {
  Mlp policy;
  Mlp value;
  AdamState policy_opt;
  AdamState value_opt;
  RngStreams rng;
  EnvPool pool;
  std::int64_t env_steps = 0;

  RawTeacher(const BaselineNets& nets, const EnvConfig& env, std::uint64_t seed, Rng& init)
      : rng(seed), pool(env, nets.num_envs, rng.env.next()) {
    policy = Mlp(layer_sizes(kTeacherObsDim, nets.policy_hidden, kNumActions));
    policy.init_orthogonal(init, std::sqrt(2.0), nets.policy_output_gain);
    value = Mlp(layer_sizes(kTeacherObsDim, nets.value_hidden, 1));
    value.init_orthogonal(init, std::sqrt(2.0), 1.0);
    policy_opt = AdamState(policy.num_params(), nets.ppo.lr);
    value_opt = AdamState(value.num_params(), nets.ppo.lr);
  }

  void anneal(const PpoConfig& ppo, std::int64_t it, std::int64_t iterations) {
    if (ppo.anneal_lr) policy_opt.lr = value_opt.lr = annealed_lr(ppo.lr, it, iterations);
  }

  AlignedRollout collect(const BaselineNets& nets) {
    const BehaviorFn behavior = [this](const Matrix& ot, const Matrix&) {
      return PolicyOutput{mlp_forward(policy, ot), mlp_forward(value, ot).col(0)};
    };
    AlignedRollout r = collect_rollout(pool, behavior, std::max(1, nets.rollout_steps / nets.num_envs), rng.sampling);
    env_steps += r.size();
    return r;
  }
};

inline Mlp make_student(const BaselineNets& nets, Rng& init) {
  Mlp s(layer_sizes(kStudentObsDim, nets.student_hidden, kNumActions));
  s.init_orthogonal(init, std::sqrt(2.0), nets.policy_output_gain);
  return s;
}

struct CrossEntropyLoss {
  double loss = 0.0;
  Matrix d_logits;
};

/// Mean over rows of -sum_a p_target(a) log softmax(logits)(a).
inline CrossEntropyLoss distillation_cross_entropy(const Matrix& logits, const Matrix& target_probs) {
  if (logits.rows() != target_probs.rows() || logits.cols() != target_probs.cols() || logits.rows() == 0) {
    throw std::invalid_argument("distillation_cross_entropy: shape mismatch");
  }
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  const Matrix logp = log_softmax_rows(logits);
  CrossEntropyLoss out;
  out.loss = -(target_probs.array() * logp.array()).sum() * inv_n;
  out.d_logits = (logp.array().exp() - target_probs.array()).matrix() * inv_n;
  return out;
}

/// Supervised distillation dataset: student observations paired with the
/// teacher's action distribution at the same state.
struct BcDataset {
  Matrix student_obs;
  Matrix teacher_probs;
};

/// Minibatch cross-entropy epochs; returns the mean loss of each epoch.
inline std::vector<double> fit_student(Mlp& student, AdamState& opt, const BcDataset& data, int epochs,
                                       int minibatch, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(data.student_obs.rows()));
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = static_cast<std::size_t>(std::max(1, minibatch));
  std::vector<double> losses;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    int count = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += mb) {
      const std::size_t end = std::min(order.size(), begin + mb);
      MlpCache cache;
      const Matrix logits = mlp_forward(student, gather_rows(data.student_obs, order, begin, end), &cache);
      const CrossEntropyLoss ce = distillation_cross_entropy(logits, gather_rows(data.teacher_probs, order, begin, end));
      adam_step(student.params(), mlp_backward(cache, ce.d_logits).params, opt);
      total += ce.loss;
      ++count;
    }
    losses.push_back(count ? total / count : 0.0);
  }
  return losses;
}

inline BatchActor raw_teacher_actor(const Mlp& policy, EvalMode mode = EvalMode::Greedy, std::uint64_t seed = 0) {
  return policy_actor(View::Teacher, [&policy](const Matrix& o) { return mlp_forward(policy, o); }, mode, seed);
}

inline BatchActor raw_student_actor(const Mlp& student, EvalMode mode = EvalMode::Greedy, std::uint64_t seed = 0) {
  return policy_actor(View::Student, [&student](const Matrix& o) { return mlp_forward(student, o); }, mode, seed);
}


inline double eval_teacher(const Mlp& policy, const RunConfig& run, std::uint64_t seed) {
  const std::uint64_t es = eval_seed(seed);
  return evaluate(raw_teacher_actor(policy, run.eval_mode, es), run.env, run.eval_episodes, es);
}

inline double eval_student(const Mlp& student, const RunConfig& run, std::uint64_t seed) {
  const std::uint64_t es = eval_seed(seed);
  return evaluate(raw_student_actor(student, run.eval_mode, es), run.env, run.eval_episodes, es);
}

struct BaselineRun {
  Mlp teacher_policy;
  Mlp teacher_value;
  Mlp student;
  CurveSeries curves;
  EvalResult final_eval;
  std::int64_t env_steps = 0;
};

inline PpoBatch raw_ppo_batch(const AlignedRollout& r, const Vector& rewards, const RawTeacher& t, const PpoConfig& cfg) {
  PpoBatch b;
  b.inputs = r.obs_teacher;
  b.actions = r.actions;
  b.old_logp = r.behavior_logp;
  const Vector bootstrap = mlp_forward(t.value, r.last_teacher).col(0);
  const Vector truncated = cfg.bootstrap_timeouts && !r.truncated.empty()
                               ? Vector(mlp_forward(t.value, r.truncated_teacher).col(0))
                               : Vector();
  const AdvantageSet adv = rollout_advantages(r, rewards, r.values, bootstrap, truncated, cfg.gamma, cfg.lambda);
  b.advantages = adv.advantages;
  b.returns = adv.returns;
  return b;
}

/// Behavior cloning: an isolated privileged teacher trained by PPO, then a
/// student fitted to the frozen teacher's action distributions.
inline BaselineRun train_bc(const BaselineNets& nets, const BcConfig& bc, const RunConfig& run, std::uint64_t seed,
                            const RowCallback& on_row = {}) {
  if (run.budget <= 0) throw ConfigError("train_bc: budget must be positive");
  Rng init(init_seed(seed));
  RawTeacher teacher(nets, run.env, seed, init);
  BaselineRun out;
  out.student = make_student(nets, init);

  const std::int64_t per_iter = static_cast<std::int64_t>(std::max(1, nets.rollout_steps / nets.num_envs)) * nets.num_envs;
  const std::int64_t teacher_budget = static_cast<std::int64_t>(bc.teacher_fraction * static_cast<double>(run.budget));
  const std::int64_t iterations = teacher_budget / per_iter;
  for (std::int64_t it = 0; it < iterations; ++it) {
    teacher.anneal(nets.ppo, it, iterations);
    const AlignedRollout r = teacher.collect(nets);
    ppo_update(teacher.policy, teacher.value, teacher.policy_opt, teacher.value_opt,
               raw_ppo_batch(r, r.rewards, teacher, nets.ppo), nets.ppo, teacher.rng.shuffle);
    if ((it + 1) % std::max(1, run.eval_every) == 0) {
      CurveRow row;
      row.env_steps = teacher.env_steps;
      row.sr_teacher = eval_teacher(teacher.policy, run, seed);
      row.mean_return = r.mean_return();
      out.curves.push_back(row);
      if (on_row) on_row(row);
    }
  }

  // Dataset from the frozen teacher with the remaining budget.
  BcDataset data;
  {
    std::vector<AlignedRollout> parts;
    Eigen::Index rows = 0;
    do {
      parts.push_back(teacher.collect(nets));
      rows += parts.back().size();
    } while (teacher.env_steps + per_iter <= run.budget);
    data.student_obs.resize(rows, kStudentObsDim);
    data.teacher_probs.resize(rows, kNumActions);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      data.student_obs.middleRows(at, p.size()) = p.obs_student;
      data.teacher_probs.middleRows(at, p.size()) = softmax_rows(p.behavior_logits);
      at += p.size();
    }
  }
  AdamState student_opt(out.student.num_params(), nets.student_lr);
  fit_student(out.student, student_opt, data, bc.student_epochs, nets.student_minibatch, teacher.rng.shuffle);

  out.final_eval.sr_teacher = eval_teacher(teacher.policy, run, seed);
  out.final_eval.sr_student = eval_student(out.student, run, seed);
  if (out.final_eval.sr_teacher < bc.teacher_warn_threshold) {
    std::cerr << "warning: BC teacher success " << out.final_eval.sr_teacher << " below "
              << bc.teacher_warn_threshold << "; the baseline assumes a strong teacher\n";
  }
  CurveRow last;
  last.env_steps = teacher.env_steps;
  last.sr_teacher = out.final_eval.sr_teacher;
  last.sr_student = out.final_eval.sr_student;
  out.curves.push_back(last);
  if (on_row) on_row(last);

  out.teacher_policy = std::move(teacher.policy);
  out.teacher_value = std::move(teacher.value);
  out.env_steps = teacher.env_steps;
  return out;
}

/// Per-step KL(pi_T(.|o_T) || pi_S(.|o_S)) between teacher and student logits.
inline Vector teacher_student_kl(const Matrix& teacher_logits, const Matrix& student_logits) {
  const Matrix lt = log_softmax_rows(teacher_logits);
  const Matrix ls = log_softmax_rows(student_logits);
  return (lt.array().exp() * (lt.array() - ls.array())).rowwise().sum();
}

/// SITT: teacher and student trained jointly; the teacher's reward and its
/// policy loss are both penalized by alpha * KL(teacher || student).
inline BaselineRun train_sitt(const BaselineNets& nets, const SittConfig& sitt, const RunConfig& run,
                              std::uint64_t seed, const RowCallback& on_row = {}) {
  if (run.budget <= 0) throw ConfigError("train_sitt: budget must be positive");
  if (!(sitt.alpha >= 0.0) || !std::isfinite(sitt.alpha)) throw ConfigError("train_sitt: alpha must be finite and >= 0");
  Rng init(init_seed(seed));
  RawTeacher teacher(nets, run.env, seed, init);
  BaselineRun out;
  out.student = make_student(nets, init);
  AdamState student_opt(out.student.num_params(), nets.student_lr);
  // Own shuffle stream: with alpha = 0 the teacher trains exactly as plain PPO.
  Rng student_rng(derive_seed(seed, 6));

  const std::int64_t per_iter = static_cast<std::int64_t>(std::max(1, nets.rollout_steps / nets.num_envs)) * nets.num_envs;
  const std::int64_t iterations = run.budget / per_iter;
  for (std::int64_t it = 0; it < iterations; ++it) {
    teacher.anneal(nets.ppo, it, iterations);
    const AlignedRollout r = teacher.collect(nets);
    const Matrix student_logits = mlp_forward(out.student, r.obs_student);
    const Vector kl = teacher_student_kl(r.behavior_logits, student_logits);
    if (!kl.allFinite()) throw RunError("train_sitt: non-finite KL divergence");
    const Vector shaped = r.rewards - sitt.alpha * kl;

    PpoBatch batch = raw_ppo_batch(r, shaped, teacher, nets.ppo);
    batch.kl_target_logits = student_logits;
    batch.kl_coef = sitt.alpha;
    ppo_update(teacher.policy, teacher.value, teacher.policy_opt, teacher.value_opt, batch, nets.ppo,
               teacher.rng.shuffle);

    BcDataset data{r.obs_student, softmax_rows(mlp_forward(teacher.policy, r.obs_teacher))};
    fit_student(out.student, student_opt, data, sitt.student_epochs, nets.student_minibatch, student_rng);

    const bool final_iter = it + 1 == iterations;
    if ((it + 1) % std::max(1, run.eval_every) == 0 || final_iter) {
      CurveRow row;
      row.env_steps = teacher.env_steps;
      row.sr_teacher = eval_teacher(teacher.policy, run, seed);
      row.sr_student = eval_student(out.student, run, seed);
      row.mean_return = r.mean_return();
      out.curves.push_back(row);
      if (on_row) on_row(row);
      if (final_iter) out.final_eval = {row.sr_teacher, row.sr_student};
    }
  }
  if (iterations == 0) {
    out.final_eval.sr_teacher = eval_teacher(teacher.policy, run, seed);
    out.final_eval.sr_student = eval_student(out.student, run, seed);
  }
  out.teacher_policy = std::move(teacher.policy);
  out.teacher_value = std::move(teacher.value);
  out.env_steps = teacher.env_steps;
  return out;
}

}  // namespace imgap
