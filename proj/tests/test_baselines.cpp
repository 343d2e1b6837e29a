#include <gtest/gtest.h>

#include "imgap/baselines.hpp"
#include "imgap/grad_check.hpp"

namespace imgap {
namespace {

Matrix random_matrix(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Student observations of random poses on random maps.
Matrix student_observations(int n, std::uint64_t seed) {
  const EnvConfig cfg;
  Rng rng(seed);
  Matrix out(n, kStudentObsDim);
  for (int i = 0; i < n; ++i) {
    GridState s = reset(rng.next(), cfg).first;
    s.pos = {1 + static_cast<int>(rng.below(9)), 1 + static_cast<int>(rng.below(9))};
    s.orientation = static_cast<Orientation>(rng.below(4));
    const StudentObs o = obs_student(s);
    for (int j = 0; j < kStudentObsDim; ++j) out(i, j) = o[j];
  }
  return out;
}

BaselineNets small_nets() {
  BaselineNets n;
  n.policy_hidden = {16};
  n.value_hidden = {16};
  n.student_hidden = {16};
  n.num_envs = 2;
  n.rollout_steps = 128;
  n.ppo.minibatch = 32;
  n.student_minibatch = 32;
  return n;
}

RunConfig small_run(std::int64_t budget) {
  RunConfig r;
  r.env.width = 7;
  r.env.height = 7;
  r.env.goal = {5, 5};
  r.env.obstacle_density = 0.1;
  r.budget = budget;
  r.eval_every = 3;
  r.eval_episodes = 10;
  return r;
}

TEST(Distillation, CrossEntropyGradient) {
  Rng rng(1);
  const Matrix logits = random_matrix(rng, 7, kNumActions);
  const Matrix target = softmax_rows(random_matrix(rng, 7, kNumActions));
  const CrossEntropyLoss ce = distillation_cross_entropy(logits, target);
  auto loss = [&](const Vector& v) {
    return distillation_cross_entropy(Eigen::Map<const Matrix>(v.data(), 7, kNumActions), target).loss;
  };
  EXPECT_LE(grad_check(loss, Eigen::Map<const Vector>(logits.data(), logits.size()),
                       Eigen::Map<const Vector>(ce.d_logits.data(), ce.d_logits.size()), 64, rng)
                .max_rel_error,
            1e-4);
}

TEST(Distillation, MinimizedAtTheTarget) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix t_logits = random_matrix(rng, 4, kNumActions);
    const Matrix target = softmax_rows(t_logits);
    const double entropy = -(target.array() * log_softmax_rows(t_logits).array()).sum() / 4.0;
    const CrossEntropyLoss at = distillation_cross_entropy(t_logits, target);
    EXPECT_NEAR(at.loss, entropy, 1e-12);
    EXPECT_LE(at.d_logits.cwiseAbs().maxCoeff(), 1e-15);
    // Gibbs: any other prediction costs at least the entropy.
    EXPECT_GE(distillation_cross_entropy(random_matrix(rng, 4, kNumActions), target).loss, entropy);
  }
}

TEST(Distillation, TeacherStudentKl) {
  Rng rng(3);
  const Matrix a = random_matrix(rng, 5, kNumActions);
  EXPECT_LE(teacher_student_kl(a, a).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE(teacher_student_kl(a, a.array() + 3.0).cwiseAbs().maxCoeff(), 1e-12);
  const Vector kl = teacher_student_kl(a, random_matrix(rng, 5, kNumActions));
  EXPECT_GT(kl.minCoeff(), 0.0);

  Matrix p(1, 2), q(1, 2);
  p << std::log(0.9), std::log(0.1);
  q << 0.0, 0.0;
  EXPECT_NEAR(teacher_student_kl(p, q)(0), 0.9 * std::log(1.8) + 0.1 * std::log(0.2), 1e-14);
}

TEST(Distillation, RealizableTargetIsRecovered) {
  // Targets produced by a network of the student's own shape: a gap of zero is
  // attainable, and fitting must get close to it.
  Rng rng(4);
  const BaselineNets nets = small_nets();
  Rng init(5);
  Mlp reference = make_student(nets, init);
  reference.init_orthogonal(init, std::sqrt(2.0), 1.0);
  BcDataset data;
  data.student_obs = student_observations(2048, 6);
  data.teacher_probs = softmax_rows(mlp_forward(reference, data.student_obs));
  const Matrix ref_logits = mlp_forward(reference, data.student_obs);
  const double entropy = -(data.teacher_probs.array() * log_softmax_rows(ref_logits).array()).sum() / 2048.0;

  Mlp student = make_student(nets, init);
  AdamState opt(student.num_params(), 3e-3);
  const std::vector<double> losses = fit_student(student, opt, data, 150, 64, rng);
  ASSERT_EQ(losses.size(), 150u);
  EXPECT_LT(losses.back() - entropy, 0.02);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Distillation, EpochLossesTrendDown) {
  Rng rng(7);
  BcDataset data;
  data.student_obs = student_observations(512, 8);
  data.teacher_probs = softmax_rows(random_matrix(rng, 512, kNumActions));
  const BaselineNets nets = small_nets();
  Mlp student = make_student(nets, rng);
  AdamState opt(student.num_params(), 1e-3);
  const std::vector<double> l = fit_student(student, opt, data, 20, 64, rng);
  for (std::size_t k = 5; k < l.size(); k += 5) EXPECT_LT(l[k], l[k - 5]);
}

TEST(Sitt, AlphaZeroTeacherIsPlainPpo) {
  const BaselineNets nets = small_nets();
  const RunConfig run = small_run(128 * 6);
  SittConfig sitt;
  sitt.alpha = 0.0;
  BcConfig bc;
  bc.teacher_fraction = 1.0;
  bc.student_epochs = 1;
  const BaselineRun s = train_sitt(nets, sitt, run, 3);
  const BaselineRun b = train_bc(nets, bc, run, 3);
  EXPECT_TRUE(bitwise_equal(s.teacher_policy.params(), b.teacher_policy.params()));
  EXPECT_TRUE(bitwise_equal(s.teacher_value.params(), b.teacher_value.params()));

  sitt.alpha = 0.5;
  const BaselineRun k = train_sitt(nets, sitt, run, 3);
  EXPECT_FALSE(bitwise_equal(k.teacher_policy.params(), b.teacher_policy.params()));
}

TEST(Sitt, RejectsBadAlphaAndBudget) {
  SittConfig sitt;
  sitt.alpha = -0.1;
  EXPECT_THROW(train_sitt(small_nets(), sitt, small_run(1000), 1), ConfigError);
  sitt.alpha = 0.1;
  EXPECT_THROW(train_sitt(small_nets(), sitt, small_run(0), 1), ConfigError);
  EXPECT_THROW(train_bc(small_nets(), BcConfig{}, small_run(0), 1), ConfigError);
}

TEST(Bc, SpendsTheWholeBudgetAndReportsFinalRow) {
  const RunConfig run = small_run(128 * 10);
  BcConfig bc;
  bc.student_epochs = 2;
  const BaselineRun r = train_bc(small_nets(), bc, run, 2);
  EXPECT_LE(r.env_steps, run.budget);
  EXPECT_GT(r.env_steps, run.budget - 128);
  ASSERT_FALSE(r.curves.empty());
  EXPECT_EQ(r.curves.back().sr_student, r.final_eval.sr_student);
  EXPECT_EQ(r.curves.back().env_steps, r.env_steps);
}

TEST(Bc, SameSeedIsBitIdentical) {
  BcConfig bc;
  bc.student_epochs = 2;
  const BaselineRun a = train_bc(small_nets(), bc, small_run(128 * 4), 5);
  const BaselineRun b = train_bc(small_nets(), bc, small_run(128 * 4), 5);
  EXPECT_TRUE(bitwise_equal(a.student.params(), b.student.params()));
  EXPECT_EQ(a.final_eval.sr_student, b.final_eval.sr_student);
}

}  // namespace
}  // namespace imgap
