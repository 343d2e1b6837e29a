#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "imgap/distributions.hpp"
#include "imgap/grid_env.hpp"
#include "imgap/nn.hpp"
#include "imgap/random.hpp"
#include "imgap/rollout.hpp"

namespace imgap {

/// Chooses one action per live episode. Receives the full states so that
/// oracle agents can plan; learned actors read only their observation view.
using BatchActor = std::function<std::vector<Action>(const std::vector<const GridState*>&)>;

/// Fraction of `episodes` that reach the goal. Episodes run in lockstep on
/// maps from the evaluation seed stream, which is disjoint from training maps.
inline double evaluate(const BatchActor& actor, const EnvConfig& cfg, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  std::vector<GridState> states;
  states.reserve(static_cast<std::size_t>(episodes));
  for (int k = 0; k < episodes; ++k) states.push_back(reset(evaluation_map_seed(seed, k), cfg).first);
  std::vector<std::size_t> live(states.size());
  for (std::size_t k = 0; k < live.size(); ++k) live[k] = k;
  int successes = 0;
  while (!live.empty()) {
    std::vector<const GridState*> view;
    view.reserve(live.size());
    for (std::size_t k : live) view.push_back(&states[k]);
    const std::vector<Action> actions = actor(view);
    std::vector<std::size_t> still;
    for (std::size_t j = 0; j < live.size(); ++j) {
      GridState& s = states[live[j]];
      s = step(s, actions[j], cfg).state;
      if (s.terminal == Terminal::Success) ++successes;
      if (s.terminal == Terminal::Running) still.push_back(live[j]);
    }
    live.swap(still);
  }
  return static_cast<double>(successes) / episodes;
}

/// Wraps a single-state decision rule as a BatchActor.
inline BatchActor per_state_actor(std::function<Action(const GridState&)> f) {
  return [f = std::move(f)](const std::vector<const GridState*>& states) {
    std::vector<Action> out;
    out.reserve(states.size());
    for (const GridState* s : states) out.push_back(f(*s));
    return out;
  };
}

enum class View { Teacher, Student };

inline Matrix observation_batch(const std::vector<const GridState*>& states, View view) {
  const int dim = view == View::Teacher ? kTeacherObsDim : kStudentObsDim;
  Matrix m(static_cast<Eigen::Index>(states.size()), dim);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (view == View::Teacher) {
      const TeacherObs o = obs_teacher(*states[i]);
      m.row(r) = Eigen::Map<const RowVector>(o.data(), dim);
    } else {
      const StudentObs o = obs_student(*states[i]);
      m.row(r) = Eigen::Map<const RowVector>(o.data(), dim);
    }
  }
  return m;
}

/// Greedy actor over logits produced by `logits_fn` from one observation view.
inline BatchActor greedy_actor(View view, std::function<Matrix(const Matrix&)> logits_fn) {
  return [view, logits_fn = std::move(logits_fn)](const std::vector<const GridState*>& states) {
    const Matrix logits = logits_fn(observation_batch(states, view));
    std::vector<Action> out(states.size());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index a;
      logits.row(i).maxCoeff(&a);
      out[static_cast<std::size_t>(i)] = static_cast<Action>(a);
    }
    return out;
  };
}

/// Samples from the softmax over logits. The stream is seeded per actor, so
/// one evaluation call is reproducible on its own.
inline BatchActor sampling_actor(View view, std::function<Matrix(const Matrix&)> logits_fn, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [view, logits_fn = std::move(logits_fn), rng](const std::vector<const GridState*>& states) {
    const Matrix logits = logits_fn(observation_batch(states, view));
    std::vector<Action> out(states.size());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      out[static_cast<std::size_t>(i)] = static_cast<Action>(CategoricalDist(logits.row(i)).sample(*rng));
    }
    return out;
  };
}

enum class EvalMode { Greedy, Sample };

inline BatchActor policy_actor(View view, std::function<Matrix(const Matrix&)> logits_fn, EvalMode mode,
                               std::uint64_t seed) {
  if (mode == EvalMode::Greedy) return greedy_actor(view, std::move(logits_fn));
  return sampling_actor(view, std::move(logits_fn), derive_seed(seed, view == View::Teacher ? 11 : 12));
}

/// Teacher-minus-student success rate.
inline double imitation_gap(double sr_teacher, double sr_student) {
  if (sr_teacher < 0.0 || sr_teacher > 1.0 || sr_student < 0.0 || sr_student > 1.0) {
    throw std::invalid_argument("imitation_gap: success rates must lie in [0, 1]");
  }
  return sr_teacher - sr_student;
}

}  // namespace imgap
