#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "imgap/distributions.hpp"
#include "imgap/grid_env.hpp"
#include "imgap/nn.hpp"
#include "imgap/ppo.hpp"
#include "imgap/random.hpp"

namespace imgap {

/// Training maps use even seeds and evaluation maps odd seeds, so the two
/// streams never share a layout seed.
inline std::uint64_t training_map_seed(std::uint64_t stream_value) { return stream_value << 1; }
inline std::uint64_t evaluation_map_seed(std::uint64_t eval_seed, std::uint64_t episode) {
  return (derive_seed(eval_seed, episode) << 1) | 1u;
}

inline Matrix teacher_matrix(const std::vector<ObsPair>& obs) {
  Matrix m(static_cast<Eigen::Index>(obs.size()), kTeacherObsDim);
  for (std::size_t i = 0; i < obs.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(obs[i].teacher.data(), kTeacherObsDim);
  return m;
}

inline Matrix student_matrix(const std::vector<ObsPair>& obs) {
  Matrix m(static_cast<Eigen::Index>(obs.size()), kStudentObsDim);
  for (std::size_t i = 0; i < obs.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(obs[i].student.data(), kStudentObsDim);
  return m;
}

/// A fixed set of environments stepped in lockstep. Finished episodes restart
/// immediately on a fresh map drawn from the pool's own seed stream.
class EnvPool {
 public:
  EnvPool(const EnvConfig& cfg, int num_envs, std::uint64_t seed) : map_rng_(seed) {
    envs_.reserve(static_cast<std::size_t>(num_envs));
    for (int i = 0; i < num_envs; ++i) {
      envs_.emplace_back(cfg);
      envs_.back().reset(training_map_seed(map_rng_.next()));
    }
    returns_.assign(envs_.size(), 0.0);
  }

  int size() const { return static_cast<int>(envs_.size()); }
  const GridEnv& env(int i) const { return envs_[static_cast<std::size_t>(i)]; }

  std::vector<ObsPair> observations() const {
    std::vector<ObsPair> out;
    out.reserve(envs_.size());
    for (const auto& e : envs_) out.push_back(e.obs());
    return out;
  }

  struct Outcome {
    double reward = 0.0;
    bool done = false;
    Terminal terminal = Terminal::Running;
    double episode_return = 0.0;  ///< valid when done
    ObsPair final_obs;            ///< observation of the state the step reached, before any reset
  };

  Outcome step(int i, Action a) {
    GridEnv& env = envs_[static_cast<std::size_t>(i)];
    const StepResult r = env.step(a);
    returns_[i] += r.reward;
    Outcome o{r.reward, r.done, r.state.terminal, returns_[i], r.obs};
    if (r.done) {
      returns_[i] = 0.0;
      env.reset(training_map_seed(map_rng_.next()));
    }
    return o;
  }

 private:
  std::vector<GridEnv> envs_;
  std::vector<double> returns_;
  Rng map_rng_;
};

/// On-policy buffer of aligned teacher/student observations. Record k belongs
/// to environment k % num_envs at time k / num_envs.
struct AlignedRollout {
  int num_envs = 0;
  int horizon = 0;
  Matrix obs_teacher;
  Matrix obs_student;
  std::vector<int> actions;
  Vector rewards;
  std::vector<bool> dones;
  Vector values;
  Vector behavior_logp;
  Matrix behavior_logits;
  /// Observations after the last step, used for bootstrap values.
  Matrix last_teacher;
  Matrix last_student;
  /// Records whose episode hit the step limit, and the teacher observation
  /// they reached. A time limit is not a terminal state of the task, so these
  /// get bootstrapped rather than cut off.
  std::vector<int> truncated;
  Matrix truncated_teacher;

  std::vector<double> episode_returns;
  int episodes_finished = 0;
  int successes = 0;

  int size() const { return num_envs * horizon; }

  std::vector<ObsPair> pairs() const {
    std::vector<ObsPair> out(static_cast<std::size_t>(size()));
    for (int k = 0; k < size(); ++k) {
      for (int j = 0; j < kTeacherObsDim; ++j) out[k].teacher[j] = obs_teacher(k, j);
      for (int j = 0; j < kStudentObsDim; ++j) out[k].student[j] = obs_student(k, j);
    }
    return out;
  }

  double mean_return() const {
    if (episode_returns.empty()) return 0.0;
    double s = 0.0;
    for (double r : episode_returns) s += r;
    return s / static_cast<double>(episode_returns.size());
  }

  double success_rate() const {
    return episodes_finished == 0 ? 0.0 : static_cast<double>(successes) / episodes_finished;
  }
};

/// Behavior policy evaluated on a batch of current observations.
struct PolicyOutput {
  Matrix logits;  ///< (envs x actions)
  Vector values;  ///< (envs)
};
using BehaviorFn = std::function<PolicyOutput(const Matrix& obs_teacher, const Matrix& obs_student)>;

inline AlignedRollout collect_rollout(EnvPool& pool, const BehaviorFn& behavior, int horizon, Rng& rng) {
  const int e = pool.size();
  AlignedRollout r;
  r.num_envs = e;
  r.horizon = horizon;
  const Eigen::Index n = static_cast<Eigen::Index>(e) * horizon;
  r.obs_teacher.resize(n, kTeacherObsDim);
  r.obs_student.resize(n, kStudentObsDim);
  r.actions.resize(static_cast<std::size_t>(n));
  r.rewards.resize(n);
  r.dones.resize(static_cast<std::size_t>(n));
  r.values.resize(n);
  r.behavior_logp.resize(n);
  r.behavior_logits.resize(n, kNumActions);
  std::vector<TeacherObs> truncated_obs;
  for (int t = 0; t < horizon; ++t) {
    const auto obs = pool.observations();
    const Matrix ot = teacher_matrix(obs);
    const Matrix os = student_matrix(obs);
    const PolicyOutput out = behavior(ot, os);
    for (int i = 0; i < e; ++i) {
      const Eigen::Index k = static_cast<Eigen::Index>(t) * e + i;
      const CategoricalDist dist(out.logits.row(i));
      const int a = dist.sample(rng);
      r.obs_teacher.row(k) = ot.row(i);
      r.obs_student.row(k) = os.row(i);
      r.actions[k] = a;
      r.values(k) = out.values(i);
      r.behavior_logp(k) = dist.log_prob(a);
      r.behavior_logits.row(k) = out.logits.row(i);
      const EnvPool::Outcome o = pool.step(i, static_cast<Action>(a));
      r.rewards(k) = o.reward;
      r.dones[k] = o.done;
      if (o.done) {
        ++r.episodes_finished;
        if (o.terminal == Terminal::Success) ++r.successes;
        if (o.terminal == Terminal::Timeout) {
          r.truncated.push_back(static_cast<int>(k));
          truncated_obs.push_back(o.final_obs.teacher);
        }
        r.episode_returns.push_back(o.episode_return);
      }
    }
  }
  const auto last = pool.observations();
  r.last_teacher = teacher_matrix(last);
  r.last_student = student_matrix(last);
  r.truncated_teacher.resize(static_cast<Eigen::Index>(truncated_obs.size()), kTeacherObsDim);
  for (std::size_t j = 0; j < truncated_obs.size(); ++j)
    for (int c = 0; c < kTeacherObsDim; ++c) r.truncated_teacher(static_cast<Eigen::Index>(j), c) = truncated_obs[j][c];
  return r;
}

/// GAE for every environment stream of a rollout given per-record values and
/// per-environment bootstrap values. `truncated_values` holds V of the state
/// reached by each record in `r.truncated`, folded in as gamma * V on top of
/// the reward; pass an empty vector to treat timeouts as terminal.
inline AdvantageSet rollout_advantages(const AlignedRollout& r, const Vector& rewards, const Vector& values,
                                       const Vector& bootstrap, const Vector& truncated_values, double gamma,
                                       double lambda) {
  const int e = r.num_envs;
  Vector rw_all = rewards;
  if (truncated_values.size() > 0) {
    if (truncated_values.size() != static_cast<Eigen::Index>(r.truncated.size()))
      throw std::invalid_argument("rollout_advantages: truncated_values size mismatch");
    for (std::size_t j = 0; j < r.truncated.size(); ++j) rw_all(r.truncated[j]) += gamma * truncated_values(static_cast<Eigen::Index>(j));
  }
  AdvantageSet out{Vector(r.size()), Vector(r.size())};
  for (int i = 0; i < e; ++i) {
    Vector rw(r.horizon);
    Vector v(r.horizon + 1);
    std::vector<bool> d(static_cast<std::size_t>(r.horizon));
    for (int t = 0; t < r.horizon; ++t) {
      const int k = t * e + i;
      rw(t) = rw_all(k);
      v(t) = values(k);
      d[t] = r.dones[k];
    }
    v(r.horizon) = bootstrap(i);
    const AdvantageSet s = compute_gae(rw, v, d, gamma, lambda);
    for (int t = 0; t < r.horizon; ++t) {
      out.advantages(t * e + i) = s.advantages(t);
      out.returns(t * e + i) = s.returns(t);
    }
  }
  return out;
}

}  // namespace imgap
