#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "imgap/embedding.hpp"
#include "imgap/grad_check.hpp"

namespace imgap {
namespace {

Matrix random_unit_rows(Rng& rng, int n, int d) {
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return l2_normalize_rows(m).unit;
}

Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }
Matrix unflat(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

// Term-by-term symmetric InfoNCE written with plain loops.
double infonce_reference(const Matrix& zt, const Matrix& zs, double tau) {
  const int n = static_cast<int>(zt.rows());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < n; ++j) {
      row += std::exp(zt.row(i).dot(zs.row(j)) / tau);
      col += std::exp(zt.row(j).dot(zs.row(i)) / tau);
    }
    const double pos = zt.row(i).dot(zs.row(i)) / tau;
    total += -(pos - std::log(row)) - (pos - std::log(col));
  }
  return total / (2.0 * n);
}

TEST(InfoNce, SinglePairIsZero) {
  Rng rng(1);
  const Matrix zt = random_unit_rows(rng, 1, 16);
  const Matrix zs = random_unit_rows(rng, 1, 16);
  EXPECT_NEAR(infonce_loss(zt, zs, 0.1).loss, 0.0, 1e-15);
}

TEST(InfoNce, CollapsedBatchIsLogN) {
  Rng rng(2);
  for (int n : {2, 4, 8}) {
    const Matrix one = random_unit_rows(rng, 1, 16);
    const Matrix zt = one.replicate(n, 1);
    const Matrix zs = random_unit_rows(rng, 1, 16).replicate(n, 1);
    for (double tau : {0.05, 0.1, 1.0}) {
      EXPECT_NEAR(infonce_loss(zt, zs, tau).loss, std::log(static_cast<double>(n)), 1e-9) << "n=" << n;
    }
  }
}

TEST(InfoNce, OrthogonalMatchedPairs) {
  Matrix z = Matrix::Identity(2, 4);
  EXPECT_NEAR(infonce_loss(z, z, 1.0).loss, std::log(1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(infonce_loss(z, z, 1.0).loss, 0.3133, 5e-5);
}

TEST(InfoNce, MatchesTermWiseReference) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix zt = random_unit_rows(rng, 8, 16);
    const Matrix zs = random_unit_rows(rng, 8, 16);
    const double tau = 0.05 + 0.5 * rng.uniform();
    EXPECT_NEAR(infonce_loss(zt, zs, tau).loss, infonce_reference(zt, zs, tau), 1e-12);
  }
}

TEST(InfoNce, PerfectAlignmentBeatsRandom) {
  Rng rng(4);
  const Matrix z = random_unit_rows(rng, 16, 16);
  const Matrix other = random_unit_rows(rng, 16, 16);
  EXPECT_LT(infonce_loss(z, z, 0.1).loss, infonce_loss(z, other, 0.1).loss);
}

TEST(InfoNce, RejectsBadInput) {
  const Matrix z = Matrix::Identity(2, 4);
  EXPECT_THROW(infonce_loss(z, Matrix::Identity(3, 4), 0.1), std::invalid_argument);
  EXPECT_THROW(infonce_loss(z, z, 0.0), std::invalid_argument);
}

TEST(InfoNce, GradientsIncludingLogTau) {
  Rng rng(5);
  const int n = 8, d = 6;
  const Matrix zt = random_unit_rows(rng, n, d);
  const Matrix zs = random_unit_rows(rng, n, d);
  const double log_tau = std::log(0.2);
  const ContrastiveLoss c = infonce_loss(zt, zs, std::exp(log_tau));

  // Pack (zt, zs, log_tau) so one check covers every input.
  Vector p(2 * n * d + 1);
  p << flat(zt), flat(zs), log_tau;
  Vector g(p.size());
  g << flat(c.d_teacher), flat(c.d_student), c.d_log_tau;
  auto loss = [&](const Vector& v) {
    return infonce_loss(unflat(v.head(n * d), n, d), unflat(v.segment(n * d, n * d), n, d), std::exp(v(2 * n * d)))
        .loss;
  };
  const auto r = grad_check(loss, p, g, 128, rng);
  EXPECT_LE(r.max_rel_error, 1e-4);

  // The temperature coordinate specifically.
  const double h = 1e-5;
  Vector up = p, down = p;
  up(2 * n * d) += h;
  down(2 * n * d) -= h;
  EXPECT_NEAR(c.d_log_tau, (loss(up) - loss(down)) / (2 * h), 1e-7);
}

TEST(Alignment, ClosedForms) {
  Matrix a(1, 3);
  a << 1, 0, 0;
  Matrix b(1, 3);
  b << 0, 1, 0;
  EXPECT_DOUBLE_EQ(alignment_loss(a, a).loss, -1.0);
  EXPECT_DOUBLE_EQ(alignment_loss(a, b).loss, 0.0);
  EXPECT_DOUBLE_EQ(alignment_loss(a, -a).loss, 1.0);
  Rng rng(6);
  const Matrix z = random_unit_rows(rng, 5, 8);
  EXPECT_NEAR(alignment_loss(z, z).loss, -1.0, 1e-15);
}

TEST(Alignment, Gradient) {
  Rng rng(7);
  const Matrix zt = random_matrix(rng, 4, 5);
  const Matrix zs = random_matrix(rng, 4, 5);
  const PairLoss a = alignment_loss(zt, zs);
  Vector p(40), g(40);
  p << flat(zt), flat(zs);
  g << flat(a.d_first), flat(a.d_second);
  auto loss = [&](const Vector& v) { return alignment_loss(unflat(v.head(20), 4, 5), unflat(v.tail(20), 4, 5)).loss; };
  EXPECT_LE(grad_check(loss, p, g, 64, rng).max_rel_error, 1e-4);
}

TEST(Stability, UnchangedLogitsIsMinusTwo) {
  Rng rng(8);
  const Matrix lt = random_matrix(rng, 6, 8);
  const Matrix ls = random_matrix(rng, 6, 8);
  EXPECT_NEAR(stability_loss(lt, ls, lt, ls).loss, -2.0, 1e-14);
  // Positive rescaling keeps the cosine, sign flip reverses it.
  EXPECT_NEAR(stability_loss(lt, ls, 3.0 * lt, 0.5 * ls).loss, -2.0, 1e-14);
  EXPECT_NEAR(stability_loss(lt, ls, -lt, -ls).loss, 2.0, 1e-14);
}

TEST(Stability, Gradient) {
  Rng rng(9);
  const Matrix ot = random_matrix(rng, 4, 8), os = random_matrix(rng, 4, 8);
  const Matrix nt = random_matrix(rng, 4, 8), ns = random_matrix(rng, 4, 8);
  const PairLoss st = stability_loss(ot, os, nt, ns);
  Vector p(64), g(64);
  p << flat(nt), flat(ns);
  g << flat(st.d_first), flat(st.d_second);
  auto loss = [&](const Vector& v) {
    return stability_loss(ot, os, unflat(v.head(32), 4, 8), unflat(v.tail(32), 4, 8)).loss;
  };
  EXPECT_LE(grad_check(loss, p, g, 64, rng).max_rel_error, 1e-4);
}

struct Fixture {
  EncoderPair enc;
  Mlp policy;
  Matrix obs_t, obs_s, old_t, old_s;

  explicit Fixture(std::uint64_t seed, int n = 12) {
    Rng rng(seed);
    EncoderConfig cfg;
    cfg.hidden = {10};
    cfg.embedding_dim = 6;
    cfg.tau_init = 0.3;
    enc = EncoderPair::create(cfg, rng);
    policy = Mlp({6, 9, kNumActions});
    policy.init_orthogonal(rng, std::sqrt(2.0), 1.0);
    obs_t = random_matrix(rng, n, kTeacherObsDim);
    obs_s = random_matrix(rng, n, kStudentObsDim);
    old_t = random_matrix(rng, n, kNumActions);
    old_s = random_matrix(rng, n, kNumActions);
  }
};

TEST(EmbeddingLoss, EncoderGradientsMatchFiniteDifferences) {
  for (auto weights : {EmbeddingWeights{1, 1, 1}, EmbeddingWeights{1, 0, 1}, EmbeddingWeights{1, 1, 0}}) {
    Fixture f(10);
    const EmbeddingLossResult r = embedding_loss(f.enc, f.policy, f.obs_t, f.obs_s, f.old_t, f.old_s, weights);
    Rng rng(11);
    auto teacher_loss = [&](const Vector& p) {
      EncoderPair e = f.enc;
      e.teacher.params() = p;
      return embedding_loss(e, f.policy, f.obs_t, f.obs_s, f.old_t, f.old_s, weights).total;
    };
    auto student_loss = [&](const Vector& p) {
      EncoderPair e = f.enc;
      e.student.params() = p;
      return embedding_loss(e, f.policy, f.obs_t, f.obs_s, f.old_t, f.old_s, weights).total;
    };
    EXPECT_LE(grad_check(teacher_loss, f.enc.teacher.params(), r.grad_teacher, 64, rng).max_rel_error, 1e-4);
    EXPECT_LE(grad_check(student_loss, f.enc.student.params(), r.grad_student, 64, rng).max_rel_error, 1e-4);

    auto tau_loss = [&](const Vector& p) {
      EncoderPair e = f.enc;
      e.log_tau = p(0);
      return embedding_loss(e, f.policy, f.obs_t, f.obs_s, f.old_t, f.old_s, weights).total;
    };
    EXPECT_LE(grad_check(tau_loss, Vector::Constant(1, f.enc.log_tau), Vector::Constant(1, r.grad_log_tau), 4, rng)
                  .max_rel_error,
              1e-4);
  }
}

TEST(EmbeddingLoss, TotalIsWeightedSum) {
  Fixture f(12);
  const EmbeddingWeights w{0.7, 1.3, 0.4};
  const EmbeddingLossResult r = embedding_loss(f.enc, f.policy, f.obs_t, f.obs_s, f.old_t, f.old_s, w);
  EXPECT_NEAR(r.total, 0.7 * r.contrastive + 1.3 * r.alignment + 0.4 * r.stability, 1e-14);
}

TEST(EmbeddingLoss, PolicyIsNeverWritten) {
  Fixture f(13);
  const Vector before = f.policy.params();
  embedding_loss(f.enc, f.policy, f.obs_t, f.obs_s, f.old_t, f.old_s);
  EXPECT_EQ(std::memcmp(before.data(), f.policy.params().data(), sizeof(double) * before.size()), 0);
}

TEST(EmbeddingLoss, SnapshotOfCurrentPolicyGivesMinusTwo) {
  Fixture f(14);
  const Matrix lt = mlp_forward(f.policy, encode_batch(f.enc.teacher, f.obs_t).z);
  const Matrix ls = mlp_forward(f.policy, encode_batch(f.enc.student, f.obs_s).z);
  EXPECT_NEAR(embedding_loss(f.enc, f.policy, f.obs_t, f.obs_s, lt, ls).stability, -2.0, 1e-12);
}

TEST(EmbeddingLoss, WithoutStabilityTheSnapshotDoesNotMatter) {
  Fixture f(15);
  const EmbeddingWeights w{1, 1, 0};
  const EmbeddingLossResult a = embedding_loss(f.enc, f.policy, f.obs_t, f.obs_s, f.old_t, f.old_s, w);
  const EmbeddingLossResult b =
      embedding_loss(f.enc, f.policy, f.obs_t, f.obs_s, 2.0 * f.old_t + Matrix::Ones(12, 8), f.old_s, w);
  EXPECT_TRUE(a.grad_teacher == b.grad_teacher);
  EXPECT_TRUE(a.grad_student == b.grad_student);
}

TEST(EmbeddingLoss, DescentReducesContrastiveOnFixedBatch) {
  Fixture f(16, 32);
  AdamState ot(f.enc.teacher.num_params(), 1e-2), os(f.enc.student.num_params(), 1e-2);
  const EmbeddingWeights w{1, 0, 0};
  const double start = embedding_loss(f.enc, f.policy, f.obs_t, f.obs_s, f.old_t, f.old_s, w).contrastive;
  for (int i = 0; i < 200; ++i) {
    const auto r = embedding_loss(f.enc, f.policy, f.obs_t, f.obs_s, f.old_t, f.old_s, w);
    adam_step(f.enc.teacher.params(), r.grad_teacher, ot);
    adam_step(f.enc.student.params(), r.grad_student, os);
  }
  const double end = embedding_loss(f.enc, f.policy, f.obs_t, f.obs_s, f.old_t, f.old_s, w).contrastive;
  EXPECT_LT(end, 0.5 * start);
}

TEST(Encoders, OutputsAreUnitNorm) {
  Fixture f(17);
  const Matrix z = encode_batch(f.enc.teacher, f.obs_t).z;
  for (Eigen::Index i = 0; i < z.rows(); ++i) EXPECT_NEAR(z.row(i).norm(), 1.0, 1e-14);
  EXPECT_TRUE(encode(f.enc.student, f.obs_s.row(3)).isApprox(encode_batch(f.enc.student, f.obs_s).z.row(3), 1e-14));
  EXPECT_NEAR(f.enc.tau(), 0.3, 1e-15);
}

}  // namespace
}  // namespace imgap
