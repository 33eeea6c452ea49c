#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace ddvo;
using ddvo::testing::random_pose;

namespace {

// exp([w]x) by its power series.
Mat3 series_exp(const Vec3& w, int terms = 30) {
  const Mat3 s = skew<double>(w);
  Mat3 sum = Mat3::Identity();
  Mat3 term = Mat3::Identity();
  for (int k = 1; k < terms; ++k) {
    term = term * s / static_cast<double>(k);
    sum += term;
  }
  return sum;
}

}  // namespace

TEST(Project, ArithmeticExamples) {
  const auto a = project(Vec3(2, 4, 2));
  ASSERT_TRUE(a);
  EXPECT_EQ(a->u, 1.0);
  EXPECT_EQ(a->v, 2.0);
  const auto b = project(Vec3(0, 0, 1));
  ASSERT_TRUE(b);
  EXPECT_EQ(b->u, 0.0);
  EXPECT_EQ(b->v, 0.0);
  const auto c = project(Vec3(3, -6, 3));
  ASSERT_TRUE(c);
  EXPECT_EQ(c->u, 1.0);
  EXPECT_EQ(c->v, -2.0);
}

TEST(Project, BehindCameraIsEmpty) {
  EXPECT_FALSE(project(Vec3(1, 1, kEpsilonZ)));
  EXPECT_FALSE(project(Vec3(1, 1, 0)));
  EXPECT_FALSE(project(Vec3(1, 1, -2)));
  EXPECT_TRUE(project(Vec3(1, 1, 2 * kEpsilonZ)));
}

TEST(WarpPoint, IdentityPoseIsExact) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 1000; ++i) {
    const NormalizedPoint x{u(rng), u(rng)};
    const auto w = warp_point(x, Pose6D::identity(), std::abs(u(rng)));
    ASSERT_TRUE(w);
    EXPECT_EQ(w->u, x.u);
    EXPECT_EQ(w->v, x.v);
  }
}

TEST(WarpPoint, PointAtInfinityIgnoresTranslation) {
  Pose6D p;
  p.t = Vec3(0.3, -0.2, 0.5);
  const NormalizedPoint x{0.25, -0.5};
  const auto w = warp_point(x, p, 0.0);
  ASSERT_TRUE(w);
  EXPECT_EQ(w->u, x.u);
  EXPECT_EQ(w->v, x.v);
}

TEST(WarpPoint, ArithmeticExample) {
  Pose6D p;
  p.t = Vec3(0.1, 0, 0);
  const auto w = warp_point({0, 0}, p, 2.0);
  ASSERT_TRUE(w);
  EXPECT_DOUBLE_EQ(w->u, 0.2);
  EXPECT_EQ(w->v, 0.0);
}

TEST(WarpJacobian, TranslationBlockOnOpticalAxis) {
  const Mat26 j = warp_jacobian_identity({0, 0}, 0.7);
  EXPECT_EQ(j(0, 0), 0.7);
  EXPECT_EQ(j(0, 1), 0.0);
  EXPECT_EQ(j(1, 0), 0.0);
  EXPECT_EQ(j(1, 1), 0.7);
  EXPECT_EQ(j(0, 2), 0.0);
  EXPECT_EQ(j(1, 2), 0.0);
}

TEST(WarpJacobian, ZeroInverseDepthHasNoTranslationBlock) {
  const Mat26 j = warp_jacobian_identity({0.3, -0.4}, 0.0);
  EXPECT_TRUE(j.leftCols<3>().isZero(0.0));
}

TEST(WarpJacobian, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  const double h = 1e-6;
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const NormalizedPoint x{u(rng), u(rng)};
    const double d = 0.1 + std::abs(u(rng));
    const Mat26 j = warp_jacobian_identity(x, d);
    for (int k = 0; k < 6; ++k) {
      Vec6 e = Vec6::Zero();
      e(k) = h;
      const auto p = warp_point(x, Pose6D::from_vector(e), d);
      const auto m = warp_point(x, Pose6D::from_vector(-e), d);
      worst = std::max(worst, std::abs((p->u - m->u) / (2 * h) - j(0, k)));
      worst = std::max(worst, std::abs((p->v - m->v) / (2 * h) - j(1, k)));
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Rodrigues, ZeroIsIdentity) { EXPECT_TRUE(rodrigues<double>(Vec3::Zero()).isIdentity(0.0)); }

TEST(Rodrigues, HalfTurnAboutZ) {
  const Mat3 r = rodrigues<double>(Vec3(0, 0, M_PI));
  EXPECT_LT((r - Vec3(-1, -1, 1).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Rodrigues, MatchesSeriesExponential) {
  const Vec3 w(0.1, 0.2, 0.3);
  EXPECT_LT((rodrigues<double>(w) - series_exp(w)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rodrigues, SmallAngleBranchMatchesSeries) {
  for (double s : {1e-9, 3e-9, 1e-12}) {
    const Vec3 w = s * Vec3(0.3, -0.5, 0.8);
    EXPECT_LT((rodrigues<double>(w) - series_exp(w)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Rodrigues, OrthonormalWithUnitDeterminant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int n = 0; n < 10000; ++n) {
    const Mat3 r = rodrigues<double>(Vec3(u(rng), u(rng), u(rng)));
    ASSERT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    ASSERT_NEAR(r.determinant(), 1.0, 1e-10);
  }
}

TEST(Rodrigues, NegatedAngleIsInverse) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int n = 0; n < 1000; ++n) {
    const Vec3 w(u(rng), u(rng), u(rng));
    ASSERT_LT((rodrigues<double>(w) * rodrigues<double>(Vec3(-w)) - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(RotationLog, InvertsRodriguesIncludingNearHalfTurn) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double angle : {1e-10, 1e-5, 0.3, 2.0, 3.0, M_PI - 1e-6}) {
    for (int n = 0; n < 50; ++n) {
      const Vec3 axis = Vec3(u(rng), u(rng), u(rng)).normalized();
      const Vec3 w = angle * axis;
      const Vec3 back = rotation_log<double>(rodrigues<double>(w));
      ASSERT_LT((rodrigues<double>(back) - rodrigues<double>(w)).cwiseAbs().maxCoeff(), 1e-10) << angle;
      ASSERT_LE(back.norm(), M_PI + 1e-12);
    }
  }
}

TEST(ComposeLeft, IdentityDeltaLeavesPoseUnchanged) {
  std::mt19937_64 rng(6);
  const Pose6D p = random_pose(rng, 1.0, 1.0);
  const Pose6D q = compose_left(Pose6D::identity(), p);
  EXPECT_LT((q.vector() - p.vector()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ComposeLeft, SelfCompositionIsIdentity) {
  std::mt19937_64 rng(7);
  const Pose6D p = random_pose(rng, 1.0, 1.0);
  EXPECT_LT(compose_left(p, p).vector().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ComposeLeft, MatchesMatrixProduct) {
  std::mt19937_64 rng(8);
  for (int n = 0; n < 200; ++n) {
    const Pose6D a = random_pose(rng, 2.0, 1.5);
    const Pose6D b = random_pose(rng, 2.0, 1.5);
    const Mat4 expect = a.matrix().inverse() * b.matrix();
    ASSERT_LT((compose_left(a, b).matrix() - expect).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ComposeLeft, AssociativeWithMatrixChain) {
  std::mt19937_64 rng(9);
  for (int n = 0; n < 200; ++n) {
    const Pose6D a = random_pose(rng, 1.0, 1.0);
    const Pose6D b = random_pose(rng, 1.0, 1.0);
    const Pose6D c = random_pose(rng, 1.0, 1.0);
    const Mat4 chained = a.matrix().inverse() * b.matrix().inverse() * c.matrix();
    ASSERT_LT((compose_left(a, compose_left(b, c)).matrix() - chained).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(ComposeLeft, ResultRotationIsCanonical) {
  Pose6D a;
  a.omega = Vec3(0, 0, -3.0);
  Pose6D b;
  b.omega = Vec3(0, 0, 3.0);
  EXPECT_LE(compose_left(a, b).omega.norm(), M_PI);
}

TEST(Invert, ComposesToIdentity) {
  std::mt19937_64 rng(10);
  for (int n = 0; n < 100; ++n) {
    const Pose6D p = random_pose(rng, 2.0, 2.0);
    ASSERT_LT((invert(p).matrix() * p.matrix() - Mat4::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PoseJacobians, MatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  const double h = 1e-6;
  for (int n = 0; n < 20; ++n) {
    const Vec6 d = random_pose(rng, 0.5, 0.5).vector();
    const Vec6 p = random_pose(rng, 0.5, 0.5).vector();
    const auto [jd, jp] = compose_left_jacobians(d, p);
    const Mat6 ji = invert_jacobian(p);
    for (int k = 0; k < 6; ++k) {
      Vec6 e = Vec6::Zero();
      e(k) = h;
      const Vec6 fd_d = (compose_left<double>(d + e, p) - compose_left<double>(d - e, p)) / (2 * h);
      const Vec6 fd_p = (compose_left<double>(d, p + e) - compose_left<double>(d, p - e)) / (2 * h);
      const Vec6 fd_i = (invert<double>(p + e) - invert<double>(p - e)) / (2 * h);
      ASSERT_LT((jd.col(k) - fd_d).cwiseAbs().maxCoeff(), 1e-8);
      ASSERT_LT((jp.col(k) - fd_p).cwiseAbs().maxCoeff(), 1e-8);
      ASSERT_LT((ji.col(k) - fd_i).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(RotationDerivatives, MatchFiniteDifferences) {
  const Vec3 w(0.2, -0.4, 0.1);
  const auto d = rotation_derivatives(w);
  const double h = 1e-6;
  for (int k = 0; k < 3; ++k) {
    Vec3 e = Vec3::Zero();
    e(k) = h;
    const Mat3 fd = (rodrigues<double>(Vec3(w + e)) - rodrigues<double>(Vec3(w - e))) / (2 * h);
    EXPECT_LT((d[k] - fd).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(CameraIntrinsics, CoarsePixelCenterIsMeanOfFineBlock) {
  const CameraIntrinsics k{120.0, 110.0, 63.5, 47.5};
  for (int level = 1; level <= 3; ++level) {
    const CameraIntrinsics kc = k.at_level(level);
    const int s = 1 << level;
    for (int xc : {0, 3, 7}) {
      // Fine pixels [s*xc, s*xc + s - 1] average to s*xc + (s - 1)/2.
      const double fine_center = s * xc + (s - 1) / 2.0;
      EXPECT_NEAR(kc.normalize(xc, xc).u, k.normalize(fine_center, fine_center).u, 1e-14);
      EXPECT_NEAR(kc.normalize(xc, xc).v, k.normalize(fine_center, fine_center).v, 1e-14);
    }
  }
}
