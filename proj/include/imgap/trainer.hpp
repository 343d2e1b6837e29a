#pragma once

#include <algorithm>
#include <cstring>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <vector>

#include "imgap/curves.hpp"
#include "imgap/embedding.hpp"
#include "imgap/evaluation.hpp"
#include "imgap/nn.hpp"
#include "imgap/ppo.hpp"
#include "imgap/random.hpp"
#include "imgap/rollout.hpp"

namespace imgap {

/// Hyperparameters of the shared-embedding method (and its ablations).
struct SharedEmbeddingConfig {
  EncoderConfig encoder;
  std::vector<int> policy_hidden{64, 64};
  std::vector<int> value_hidden{64, 64};
  PpoConfig ppo;
  EmbeddingWeights weights;
  double embedding_lr = 3e-4;
  bool embedding_anneal_lr = true;
  int embedding_epochs = 3;
  int embedding_minibatch = 256;
  double embedding_max_grad_norm = 1.0;
  /// Earlier rollouts whose observation pairs are also used for embedding training.
  int embedding_replay = 0;
  /// Critic reads raw teacher observations instead of the teacher embedding.
  bool asymmetric_critic = false;
  double policy_output_gain = 0.01;
  int num_envs = 8;
  int rollout_steps = 2048;
};

/// Settings shared by every method's training loop.
struct RunConfig {
  EnvConfig env;
  std::int64_t budget = 500000;
  int eval_every = 10;
  int eval_episodes = 100;
  EvalMode eval_mode = EvalMode::Sample;
};

inline std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

/// Independent random streams derived from one master seed.
struct RngStreams {
  Rng env;
  Rng sampling;
  Rng shuffle;

  explicit RngStreams(std::uint64_t seed)
      : env(derive_seed(seed, 1)), sampling(derive_seed(seed, 2)), shuffle(derive_seed(seed, 3)) {}
};

inline std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, 4); }
inline std::uint64_t eval_seed(std::uint64_t seed) { return derive_seed(seed, 5); }

struct TrainerState {
  EncoderPair encoders;
  Mlp policy;
  Mlp value;
  AdamState teacher_opt;
  AdamState student_opt;
  AdamState tau_opt;
  AdamState policy_opt;
  AdamState value_opt;
  std::int64_t iteration = 0;
  std::int64_t env_steps = 0;
  RngStreams rng;
  EnvPool pool;
  std::deque<AlignedRollout> replay;

  TrainerState(const SharedEmbeddingConfig& cfg, const EnvConfig& env, std::uint64_t seed)
      : rng(seed), pool(env, cfg.num_envs, rng.env.next()) {
    Rng init(init_seed(seed));
    encoders = EncoderPair::create(cfg.encoder, init);
    policy = Mlp(layer_sizes(cfg.encoder.embedding_dim, cfg.policy_hidden, kNumActions));
    policy.init_orthogonal(init, std::sqrt(2.0), cfg.policy_output_gain);
    const int value_in = cfg.asymmetric_critic ? kTeacherObsDim : cfg.encoder.embedding_dim;
    value = Mlp(layer_sizes(value_in, cfg.value_hidden, 1));
    value.init_orthogonal(init, std::sqrt(2.0), 1.0);
    teacher_opt = AdamState(encoders.teacher.num_params(), cfg.embedding_lr);
    student_opt = AdamState(encoders.student.num_params(), cfg.embedding_lr);
    tau_opt = AdamState(1, cfg.embedding_lr);
    policy_opt = AdamState(policy.num_params(), cfg.ppo.lr);
    value_opt = AdamState(value.num_params(), cfg.ppo.lr);
  }
};

inline Matrix teacher_embeddings(const EncoderPair& enc, const Matrix& obs_t) { return encode_batch(enc.teacher, obs_t).z; }
inline Matrix student_embeddings(const EncoderPair& enc, const Matrix& obs_s) { return encode_batch(enc.student, obs_s).z; }

inline Matrix critic_inputs(const SharedEmbeddingConfig& cfg, const EncoderPair& enc, const Matrix& obs_t) {
  return cfg.asymmetric_critic ? obs_t : teacher_embeddings(enc, obs_t);
}

/// Rolls out policy(E_T(o_T)) and records both views at every step.
inline AlignedRollout collect_rollout(TrainerState& ts, const SharedEmbeddingConfig& cfg) {
  const int horizon = std::max(1, cfg.rollout_steps / cfg.num_envs);
  const BehaviorFn behavior = [&](const Matrix& ot, const Matrix&) {
    const Matrix z = teacher_embeddings(ts.encoders, ot);
    PolicyOutput out;
    out.logits = mlp_forward(ts.policy, z);
    out.values = mlp_forward(ts.value, cfg.asymmetric_critic ? ot : z).col(0);
    return out;
  };
  AlignedRollout r = collect_rollout(ts.pool, behavior, horizon, ts.rng.sampling);
  ts.env_steps += r.size();
  return r;
}

/// Frozen copies taken before the embedding phase, with the policy logits
/// they produce on both observation streams of the training data.
struct TrainSnapshot {
  EncoderPair encoders;
  Mlp policy;
  Matrix old_logits_teacher;
  Matrix old_logits_student;
};

inline TrainSnapshot take_snapshot(const TrainerState& ts, const Matrix& obs_t, const Matrix& obs_s) {
  TrainSnapshot s{ts.encoders, ts.policy, {}, {}};
  s.old_logits_teacher = mlp_forward(s.policy, teacher_embeddings(s.encoders, obs_t));
  s.old_logits_student = mlp_forward(s.policy, student_embeddings(s.encoders, obs_s));
  return s;
}

struct EmbeddingPhaseStats {
  double contrastive = 0.0;
  double alignment = 0.0;
  double stability = 0.0;
  double total = 0.0;
};

/// Phase one: minibatch descent on the embedding objective. Updates the two
/// encoders and the temperature; policy and value parameters are read only.
inline EmbeddingPhaseStats embedding_phase(TrainerState& ts, const SharedEmbeddingConfig& cfg, const Matrix& obs_t,
                                           const Matrix& obs_s, const TrainSnapshot& snap) {
  const Eigen::Index n = obs_t.rows();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = static_cast<std::size_t>(std::max(1, cfg.embedding_minibatch));
  EmbeddingPhaseStats stats;
  int count = 0;
  for (int epoch = 0; epoch < cfg.embedding_epochs; ++epoch) {
    ts.rng.shuffle.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += mb) {
      const std::size_t end = std::min(order.size(), begin + mb);
      // A lone leftover pair carries no negatives; fold it into the previous batch instead.
      if (end - begin < 2 && begin > 0) break;
      const EmbeddingLossResult r = embedding_loss(
          ts.encoders, ts.policy, gather_rows(obs_t, order, begin, end), gather_rows(obs_s, order, begin, end),
          gather_rows(snap.old_logits_teacher, order, begin, end),
          gather_rows(snap.old_logits_student, order, begin, end), cfg.weights);
      if (!std::isfinite(r.total)) throw RunError("embedding_phase: non-finite embedding loss");
      Vector gt = r.grad_teacher;
      Vector gs = r.grad_student;
      clip_grad_norm(gt, cfg.embedding_max_grad_norm);
      clip_grad_norm(gs, cfg.embedding_max_grad_norm);
      adam_step(ts.encoders.teacher.params(), gt, ts.teacher_opt);
      adam_step(ts.encoders.student.params(), gs, ts.student_opt);
      Vector tau_param = Vector::Constant(1, ts.encoders.log_tau);
      adam_step(tau_param, Vector::Constant(1, r.grad_log_tau), ts.tau_opt);
      ts.encoders.log_tau = tau_param(0);
      stats.contrastive += r.contrastive;
      stats.alignment += r.alignment;
      stats.stability += r.stability;
      stats.total += r.total;
      ++count;
    }
  }
  if (count > 0) {
    stats.contrastive /= count;
    stats.alignment /= count;
    stats.stability /= count;
    stats.total /= count;
  }
  return stats;
}

/// Phase two: PPO on embeddings from the now-frozen encoders. Behavior
/// log-probs and values are recomputed under the phase-start policy on the
/// refreshed embeddings so that probability ratios start at one.
inline PpoStats policy_phase(TrainerState& ts, const SharedEmbeddingConfig& cfg, const AlignedRollout& r,
                             const TrainSnapshot& snap) {
  PpoBatch batch;
  batch.inputs = teacher_embeddings(ts.encoders, r.obs_teacher);
  const Matrix logp = log_softmax_rows(mlp_forward(snap.policy, batch.inputs));
  batch.actions = r.actions;
  batch.old_logp.resize(r.size());
  for (int k = 0; k < r.size(); ++k) batch.old_logp(k) = logp(k, r.actions[k]);
  const Vector values = mlp_forward(ts.value, critic_inputs(cfg, ts.encoders, r.obs_teacher)).col(0);
  const Vector bootstrap = mlp_forward(ts.value, critic_inputs(cfg, ts.encoders, r.last_teacher)).col(0);
  const Vector truncated = cfg.ppo.bootstrap_timeouts && !r.truncated.empty()
                               ? Vector(mlp_forward(ts.value, critic_inputs(cfg, ts.encoders, r.truncated_teacher)).col(0))
                               : Vector();
  const AdvantageSet adv =
      rollout_advantages(r, r.rewards, values, bootstrap, truncated, cfg.ppo.gamma, cfg.ppo.lambda);
  batch.advantages = adv.advantages;
  batch.returns = adv.returns;
  if (cfg.asymmetric_critic) batch.value_inputs = r.obs_teacher;
  return ppo_update(ts.policy, ts.value, ts.policy_opt, ts.value_opt, batch, cfg.ppo, ts.rng.shuffle);
}

struct IterationStats {
  EmbeddingPhaseStats embedding;
  PpoStats ppo;
  double tau = 0.0;
  double mean_return = 0.0;
  double rollout_success = 0.0;
  bool policy_untouched_in_phase1 = true;
  bool encoders_untouched_in_phase2 = true;
};

inline bool bitwise_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data(),
                                            [](double x, double y) { return std::memcmp(&x, &y, sizeof(double)) == 0; });
}

/// One alternation: collect, snapshot, embedding phase, policy phase.
inline IterationStats train_iteration(TrainerState& ts, const SharedEmbeddingConfig& cfg) {
  AlignedRollout r = collect_rollout(ts, cfg);

  Matrix obs_t = r.obs_teacher;
  Matrix obs_s = r.obs_student;
  if (cfg.embedding_replay > 0) {
    Eigen::Index rows = obs_t.rows();
    for (const auto& old : ts.replay) rows += old.obs_teacher.rows();
    Matrix all_t(rows, obs_t.cols());
    Matrix all_s(rows, obs_s.cols());
    Eigen::Index at = 0;
    all_t.topRows(obs_t.rows()) = obs_t;
    all_s.topRows(obs_s.rows()) = obs_s;
    at = obs_t.rows();
    for (const auto& old : ts.replay) {
      all_t.middleRows(at, old.obs_teacher.rows()) = old.obs_teacher;
      all_s.middleRows(at, old.obs_student.rows()) = old.obs_student;
      at += old.obs_teacher.rows();
    }
    obs_t = std::move(all_t);
    obs_s = std::move(all_s);
  }

  const TrainSnapshot snap = take_snapshot(ts, obs_t, obs_s);

  IterationStats stats;
  const Vector policy_before = ts.policy.params();
  const Vector value_before = ts.value.params();
  stats.embedding = embedding_phase(ts, cfg, obs_t, obs_s, snap);
  stats.policy_untouched_in_phase1 =
      bitwise_equal(policy_before, ts.policy.params()) && bitwise_equal(value_before, ts.value.params());

  const Vector teacher_before = ts.encoders.teacher.params();
  const Vector student_before = ts.encoders.student.params();
  const double tau_before = ts.encoders.log_tau;
  stats.ppo = policy_phase(ts, cfg, r, snap);
  stats.encoders_untouched_in_phase2 = bitwise_equal(teacher_before, ts.encoders.teacher.params()) &&
                                       bitwise_equal(student_before, ts.encoders.student.params()) &&
                                       std::memcmp(&tau_before, &ts.encoders.log_tau, sizeof(double)) == 0;

  stats.tau = ts.encoders.tau();
  stats.mean_return = r.mean_return();
  stats.rollout_success = r.success_rate();
  if (cfg.embedding_replay > 0) {
    ts.replay.push_front(std::move(r));
    while (static_cast<int>(ts.replay.size()) > cfg.embedding_replay) ts.replay.pop_back();
  }
  ++ts.iteration;
  return stats;
}

inline BatchActor teacher_actor(const TrainerState& ts, EvalMode mode = EvalMode::Greedy, std::uint64_t seed = 0) {
  return policy_actor(View::Teacher, [&ts](const Matrix& o) {
    return mlp_forward(ts.policy, teacher_embeddings(ts.encoders, o));
  }, mode, seed);
}

/// The student reuses the teacher's policy head on student embeddings.
inline BatchActor student_actor(const TrainerState& ts, EvalMode mode = EvalMode::Greedy, std::uint64_t seed = 0) {
  return policy_actor(View::Student, [&ts](const Matrix& o) {
    return mlp_forward(ts.policy, student_embeddings(ts.encoders, o));
  }, mode, seed);
}

struct EvalResult {
  double sr_teacher = 0.0;
  double sr_student = 0.0;
};

inline EvalResult evaluate_shared(const TrainerState& ts, const RunConfig& run, std::uint64_t seed) {
  const std::uint64_t es = eval_seed(seed);
  return {evaluate(teacher_actor(ts, run.eval_mode, es), run.env, run.eval_episodes, es),
          evaluate(student_actor(ts, run.eval_mode, es), run.env, run.eval_episodes, es)};
}

using RowCallback = std::function<void(const CurveRow&)>;
using IterationCallback = std::function<void(const TrainerState&, const IterationStats&)>;

struct SharedEmbeddingRun {
  TrainerState state;
  CurveSeries curves;
  EvalResult final_eval;
  std::int64_t iterations = 0;
};

/// Alternating training until the environment-step budget is spent, with
/// teacher/student evaluations every `eval_every` iterations and at the end.
inline SharedEmbeddingRun train_shared_embedding(const SharedEmbeddingConfig& cfg, const RunConfig& run,
                                                 std::uint64_t seed, const RowCallback& on_row = {},
                                                 const IterationCallback& on_iteration = {}) {
  if (run.budget <= 0) throw ConfigError("train: budget must be positive");
  SharedEmbeddingRun out{TrainerState(cfg, run.env, seed), {}, {}, 0};
  TrainerState& ts = out.state;
  const std::int64_t per_iter = static_cast<std::int64_t>(std::max(1, cfg.rollout_steps / cfg.num_envs)) * cfg.num_envs;
  const std::int64_t iterations = run.budget / per_iter;
  IterationStats last{};
  for (std::int64_t it = 0; it < iterations; ++it) {
    if (cfg.ppo.anneal_lr) ts.policy_opt.lr = ts.value_opt.lr = annealed_lr(cfg.ppo.lr, it, iterations);
    if (cfg.embedding_anneal_lr) {
      ts.teacher_opt.lr = ts.student_opt.lr = ts.tau_opt.lr = annealed_lr(cfg.embedding_lr, it, iterations);
    }
    last = train_iteration(ts, cfg);
    if (on_iteration) on_iteration(ts, last);
    const bool final_iter = it + 1 == iterations;
    if ((it + 1) % std::max(1, run.eval_every) == 0 || final_iter) {
      const EvalResult ev = evaluate_shared(ts, run, seed);
      CurveRow row{ts.env_steps, ev.sr_teacher, ev.sr_student, last.embedding.contrastive,
                   last.embedding.alignment, last.embedding.stability, last.tau, last.mean_return};
      out.curves.push_back(row);
      if (on_row) on_row(row);
      if (final_iter) out.final_eval = ev;
    }
  }
  out.iterations = iterations;
  if (iterations == 0) out.final_eval = evaluate_shared(ts, run, seed);
  return out;
}

}  // namespace imgap
