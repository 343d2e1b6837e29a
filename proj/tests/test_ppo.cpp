#include <gtest/gtest.h>

#include <cmath>

#include "imgap/grad_check.hpp"
#include "imgap/ppo.hpp"
#include "imgap/rollout.hpp"

namespace imgap {
namespace {

Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

// Advantage from its definition: sum over l of (gamma lambda)^l delta_{t+l},
// truncated at the first terminal step.
Vector gae_by_definition(const Vector& r, const Vector& v, const std::vector<bool>& done, double g, double lam) {
  const Eigen::Index n = r.size();
  Vector a = Vector::Zero(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    double weight = 1.0;
    for (Eigen::Index k = t; k < n; ++k) {
      const double next = done[k] ? 0.0 : v(k + 1);
      a(t) += weight * (r(k) + g * next - v(k));
      if (done[k]) break;
      weight *= g * lam;
    }
  }
  return a;
}

TEST(Gae, SingleTerminalStep) {
  const AdvantageSet a = compute_gae(vec({1.0}), vec({0.4, 123.0}), {true}, 0.99, 0.95);
  EXPECT_DOUBLE_EQ(a.advantages(0), 0.6);
  EXPECT_DOUBLE_EQ(a.returns(0), 1.0);
}

TEST(Gae, LambdaZeroIsTdError) {
  const Vector r = vec({0.5, -0.2, 1.0});
  const Vector v = vec({0.1, 0.3, -0.4, 0.7});
  const AdvantageSet a = compute_gae(r, v, {false, false, false}, 0.9, 0.0);
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(a.advantages(t), r(t) + 0.9 * v(t + 1) - v(t), 1e-15);
}

TEST(Gae, LambdaOneIsMonteCarloMinusValue) {
  const Vector r = vec({0.5, -0.2, 1.0});
  const Vector v = vec({0.1, 0.3, -0.4, 0.7});
  const AdvantageSet a = compute_gae(r, v, {false, false, false}, 0.9, 1.0);
  const double g2 = r(2) + 0.9 * v(3);
  const double g1 = r(1) + 0.9 * g2;
  const double g0 = r(0) + 0.9 * g1;
  EXPECT_NEAR(a.returns(0), g0, 1e-14);
  EXPECT_NEAR(a.returns(1), g1, 1e-14);
  EXPECT_NEAR(a.returns(2), g2, 1e-14);
}

TEST(Gae, MatchesDefinitionOnRandomSegments) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(12));
    Vector r(n), v(n + 1);
    std::vector<bool> done(n);
    for (int t = 0; t < n; ++t) {
      r(t) = rng.normal();
      done[t] = rng.uniform() < 0.2;
    }
    for (int t = 0; t <= n; ++t) v(t) = rng.normal();
    const double g = rng.uniform(), lam = rng.uniform();
    const AdvantageSet a = compute_gae(r, v, done, g, lam);
    const Vector ref = gae_by_definition(r, v, done, g, lam);
    ASSERT_TRUE(a.advantages.isApprox(ref, 1e-12)) << "trial " << trial;
    ASSERT_TRUE(a.returns.isApprox(ref + v.head(n), 1e-12));
  }
}

TEST(Gae, DoneStopsBootstrap) {
  const AdvantageSet a = compute_gae(vec({0.0, 0.0}), vec({0.0, 0.0, 100.0}), {false, true}, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(a.advantages(1), 0.0);
  EXPECT_DOUBLE_EQ(a.advantages(0), 0.0);
  EXPECT_THROW(compute_gae(vec({0.0}), vec({0.0}), {false}, 0.9, 0.9), std::invalid_argument);
}

TEST(Gae, TruncationBootstrapsTheReachedState) {
  AlignedRollout r;
  r.num_envs = 1;
  r.horizon = 3;
  r.dones = {false, true, false};
  r.truncated = {1};
  const Vector rw = vec({-0.01, -0.01, -0.01});
  const Vector v = vec({0.2, 0.3, 0.4});
  const double g = 0.9;
  const AdvantageSet cut = rollout_advantages(r, rw, v, vec({0.7}), Vector(), g, 0.0);
  const AdvantageSet boot = rollout_advantages(r, rw, v, vec({0.7}), vec({0.5}), g, 0.0);
  EXPECT_NEAR(cut.advantages(1), -0.01 - 0.3, 1e-15);
  EXPECT_NEAR(boot.advantages(1), -0.01 + g * 0.5 - 0.3, 1e-15);
  EXPECT_NEAR(boot.advantages(2), -0.01 + g * 0.7 - 0.4, 1e-15);
  EXPECT_EQ(boot.advantages(0), cut.advantages(0));
  EXPECT_THROW(rollout_advantages(r, rw, v, vec({0.7}), vec({0.5, 0.5}), g, 0.0), std::invalid_argument);
}

TEST(Rollout, TimeoutsAreRecordedWithTheReachedObservation) {
  // Turning never ends an episode early, so every episode times out.
  EnvConfig cfg;
  cfg.max_steps = 5;
  EnvPool pool(cfg, 3, 11);
  Rng rng(12);
  const BehaviorFn face_north = [](const Matrix& ot, const Matrix&) {
    PolicyOutput out{Matrix::Constant(ot.rows(), kNumActions, -50.0), Vector::Zero(ot.rows())};
    out.logits.col(static_cast<int>(Action::FaceN)).setZero();
    return out;
  };
  const AlignedRollout r = collect_rollout(pool, face_north, 20, rng);
  ASSERT_EQ(r.truncated.size(), 12u);
  ASSERT_EQ(r.truncated_teacher.rows(), 12);
  for (std::size_t j = 0; j < r.truncated.size(); ++j) {
    const int k = r.truncated[j];
    EXPECT_TRUE(r.dones[k]);
    EXPECT_EQ((k / 3) % 5, 4);
    EXPECT_TRUE(r.truncated_teacher.row(static_cast<Eigen::Index>(j)) == r.obs_teacher.row(k));
  }
  EXPECT_EQ(r.successes, 0);
}

TEST(Clip, ObjectiveArithmetic) {
  EXPECT_DOUBLE_EQ(clipped_objective(1.5, 1.0, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(clipped_objective(0.5, 1.0, 0.2), 0.5);
  EXPECT_DOUBLE_EQ(clipped_objective(0.5, -1.0, 0.2), -0.8);
  EXPECT_DOUBLE_EQ(clipped_objective(1.5, -1.0, 0.2), -1.5);
  EXPECT_DOUBLE_EQ(clipped_objective(1.1, 2.0, 0.2), 2.2);
}

TEST(Clip, PessimisticBound) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double ratio = std::exp(rng.normal()), adv = rng.normal();
    EXPECT_LE(clipped_objective(ratio, adv, 0.2), ratio * adv + 1e-15);
  }
}

TEST(PolicyLoss, RatioOneGivesMinusMeanAdvantage) {
  Rng rng(3);
  const Matrix logits = random_matrix(rng, 6, 8);
  const Matrix logp = log_softmax_rows(logits);
  std::vector<int> actions{0, 3, 7, 2, 2, 5};
  Vector old(6), adv(6);
  for (int i = 0; i < 6; ++i) {
    old(i) = logp(i, actions[i]);
    adv(i) = rng.normal();
  }
  const PolicyLoss pl = ppo_policy_loss(logits, actions, old, adv, 0.2, 0.0);
  EXPECT_NEAR(pl.surrogate, -adv.mean(), 1e-14);
  EXPECT_EQ(pl.clip_fraction, 0.0);
}

TEST(PolicyLoss, GradientWithEntropyAndKl) {
  Rng rng(4);
  const int n = 10;
  const Matrix logits = random_matrix(rng, n, 8);
  const Matrix target = random_matrix(rng, n, 8);
  const Matrix logp = log_softmax_rows(logits);
  std::vector<int> actions(n);
  Vector old(n), adv(n);
  for (int i = 0; i < n; ++i) {
    actions[i] = static_cast<int>(rng.below(8));
    // Ratios spread well inside and outside the clip band, away from the kinks.
    const double offsets[] = {0.0, 0.1, -0.1, 0.6, -0.6};
    old(i) = logp(i, actions[i]) + offsets[i % 5];
    adv(i) = rng.normal();
  }
  const KlPenalty kl{&target, 0.3};
  const PolicyLoss pl = ppo_policy_loss(logits, actions, old, adv, 0.2, 0.05, kl);
  EXPECT_GT(pl.clip_fraction, 0.0);
  auto loss = [&](const Vector& v) {
    return ppo_policy_loss(Eigen::Map<const Matrix>(v.data(), n, 8), actions, old, adv, 0.2, 0.05, kl).loss;
  };
  const auto r = grad_check(loss, Eigen::Map<const Vector>(logits.data(), logits.size()),
                            Eigen::Map<const Vector>(pl.d_logits.data(), pl.d_logits.size()), 80, rng);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(PolicyLoss, KlTermValue) {
  Matrix l(1, 2), t(1, 2);
  l << 0.0, 0.0;
  t << std::log(0.25), std::log(0.75);
  const PolicyLoss pl = ppo_policy_loss(l, {0}, vec({std::log(0.5)}), vec({0.0}), 0.2, 0.0, {&t, 1.0});
  EXPECT_NEAR(pl.kl_penalty, 0.5 * std::log(2.0) + 0.5 * std::log(0.5 / 0.75), 1e-14);
}

TEST(ValueLoss, ValueAndGradient) {
  Matrix v(3, 1);
  v << 1.0, 2.0, 3.0;
  const ValueLoss vl = ppo_value_loss(v, vec({0.0, 2.0, 5.0}), 0.5);
  EXPECT_DOUBLE_EQ(vl.loss, 0.5 * (1.0 + 0.0 + 4.0) / 3.0);
  Rng rng(5);
  const Vector ret = vec({0.3, -1.0, 2.0});
  auto loss = [&](const Vector& x) { return ppo_value_loss(Matrix(Eigen::Map<const Matrix>(x.data(), 3, 1)), ret, 0.5).loss; };
  const ValueLoss g = ppo_value_loss(v, ret, 0.5);
  EXPECT_LE(grad_check(loss, Eigen::Map<const Vector>(v.data(), 3), Eigen::Map<const Vector>(g.d_values.data(), 3), 64,
                       rng)
                .max_rel_error,
            1e-4);
}

TEST(Advantages, Normalization) {
  const Vector a = normalize_advantages(vec({1.0, 2.0, 3.0, 6.0}));
  EXPECT_NEAR(a.mean(), 0.0, 1e-15);
  EXPECT_NEAR(a.squaredNorm() / 4.0, 1.0, 1e-7);
}

TEST(PpoUpdate, TwoArmedBanditConverges) {
  Rng rng(6);
  Mlp policy({1, 8, 2});
  policy.init_orthogonal(rng, std::sqrt(2.0), 0.01);
  Mlp value({1, 8, 1});
  value.init_orthogonal(rng, std::sqrt(2.0), 1.0);
  PpoConfig cfg;
  cfg.lr = 1e-2;
  cfg.minibatch = 64;
  AdamState po(policy.num_params(), cfg.lr), vo(value.num_params(), cfg.lr);
  const Matrix x = Matrix::Ones(256, 1);
  PpoStats last;
  for (int it = 0; it < 40; ++it) {
    const Matrix logits = mlp_forward(policy, x);
    const Vector v = mlp_forward(value, x).col(0);
    PpoBatch b;
    b.inputs = x;
    b.old_logp.resize(256);
    b.returns.resize(256);
    for (int i = 0; i < 256; ++i) {
      const CategoricalDist d(logits.row(i));
      const int a = d.sample(rng);
      b.actions.push_back(a);
      b.old_logp(i) = d.log_prob(a);
      b.returns(i) = a == 0 ? 1.0 : 0.2;  // one-step episodes
    }
    b.advantages = b.returns - v;
    last = ppo_update(policy, value, po, vo, b, cfg, rng);
    EXPECT_GE(last.ratio_in_band_first_epoch, 0.0);
    EXPECT_LE(last.ratio_in_band_first_epoch, 1.0);
  }
  const RowVector p = softmax(mlp_forward(policy, Matrix(Matrix::Ones(1, 1))).row(0));
  EXPECT_GT(p(0), 0.95);
  EXPECT_NEAR(mlp_forward(value, Matrix(Matrix::Ones(1, 1)))(0, 0), 1.0, 0.1);
}

TEST(PpoUpdate, FirstEpochRatiosStayNearOne) {
  Rng rng(7);
  Mlp policy({4, 16, 8});
  policy.init_orthogonal(rng, std::sqrt(2.0), 0.01);
  Mlp value({4, 16, 1});
  value.init_orthogonal(rng, std::sqrt(2.0), 1.0);
  PpoConfig cfg;
  AdamState po(policy.num_params(), cfg.lr), vo(value.num_params(), cfg.lr);
  PpoBatch b;
  b.inputs = random_matrix(rng, 1024, 4);
  const Matrix logp = log_softmax_rows(mlp_forward(policy, b.inputs));
  b.old_logp.resize(1024);
  for (int i = 0; i < 1024; ++i) {
    b.actions.push_back(static_cast<int>(rng.below(8)));
    b.old_logp(i) = logp(i, b.actions[i]);
  }
  b.advantages = random_matrix(rng, 1024, 1).col(0);
  b.returns = b.advantages;
  const PpoStats s = ppo_update(policy, value, po, vo, b, cfg, rng);
  EXPECT_GE(s.ratio_in_band_first_epoch, 0.95);
  EXPECT_EQ(s.minibatches, cfg.epochs * 4);
}

TEST(PpoUpdate, RejectsEmptyBatch) {
  Mlp p({2, 2}), v({2, 1});
  AdamState po(p.num_params(), 1e-3), vo(v.num_params(), 1e-3);
  Rng rng(8);
  EXPECT_THROW(ppo_update(p, v, po, vo, PpoBatch{}, PpoConfig{}, rng), std::invalid_argument);
}

}  // namespace
}  // namespace imgap
