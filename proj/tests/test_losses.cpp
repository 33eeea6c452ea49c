#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace ddvo;

namespace {

InverseDepthMap positive_map(std::mt19937_64& rng, int w, int h) {
  InverseDepthMap d = ddvo::testing::random_image(rng, w, h);
  for (double& v : d.storage()) v = 0.2 + 0.6 * v;
  return d;
}

ImageBuffer scaled(const ImageBuffer& img, double s) {
  ImageBuffer out = img;
  for (double& v : out.storage()) v *= s;
  return out;
}

Triplet random_triplet(std::uint64_t seed) {
  SceneSpec spec = ddvo::testing::small_spec(seed, SceneKind::SmoothHeightField, 64, 48);
  const Scene scene = make_scene(spec);
  Pose6D p21;
  p21.t = Vec3(0.05, -0.01, 0.02);
  p21.omega = Vec3(0.003, -0.004, 0.001);
  Pose6D p23;
  p23.t = Vec3(-0.02, 0.05, -0.01);
  p23.omega = Vec3(-0.002, 0.002, 0.003);
  Triplet t = make_triplet(scene, p21, p23).triplet;
  // Perturb the depths so that no term sits at its optimum.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.8, 1.2);
  for (auto& d : t.depths) {
    for (double& v : d.storage()) v *= u(rng);
  }
  return t;
}

}  // namespace

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_inverse_depth(ImageBuffer(2, 2, 1, 2.0)), ImageBuffer(2, 2, 1, 1.0));
  const ImageBuffer d(2, 1, 1, std::vector<double>{1.0, 3.0});
  EXPECT_EQ(normalize_inverse_depth(d), ImageBuffer(2, 1, 1, std::vector<double>{0.5, 1.5}));
}

TEST(Normalize, MeanOneAndIdempotent) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const InverseDepthMap d = positive_map(rng, 13, 11);
    const InverseDepthMap n = normalize_inverse_depth(d);
    EXPECT_NEAR(n.mean(), 1.0, 1e-12);
    const InverseDepthMap nn = normalize_inverse_depth(n);
    for (std::size_t k = 0; k < n.storage().size(); ++k) EXPECT_NEAR(nn.storage()[k], n.storage()[k], 1e-14);
  }
}

TEST(Normalize, CollapsedDepthRaises) {
  EXPECT_THROW(normalize_inverse_depth(ImageBuffer(4, 4, 1, 0.0)), DegenerateDepth);
  EXPECT_THROW(normalize_inverse_depth(ImageBuffer(4, 4, 1, 1e-13)), DegenerateDepth);
  EXPECT_NO_THROW(normalize_inverse_depth(ImageBuffer(4, 4, 1, 1e-11)));
}

// Power-of-two factors scale the sum exactly, so normalization removes them
// bit for bit.
TEST(Normalize, ScaleInvariance) {
  std::mt19937_64 rng(2);
  const InverseDepthMap d = positive_map(rng, 16, 16);
  for (double s : {0.25, 0.5, 2.0, 8.0}) EXPECT_EQ(normalize_inverse_depth(scaled(d, s)), normalize_inverse_depth(d));
  for (double s : {0.3, 1.7, 11.0}) {
    const auto a = normalize_inverse_depth(scaled(d, s));
    const auto b = normalize_inverse_depth(d);
    for (std::size_t k = 0; k < a.storage().size(); ++k) EXPECT_NEAR(a.storage()[k], b.storage()[k], 1e-12);
  }
}

TEST(Normalize, VjpMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const InverseDepthMap d = positive_map(rng, 5, 4);
  const ImageBuffer g = ddvo::testing::random_image(rng, 5, 4);
  const ImageBuffer vjp = normalize_inverse_depth_vjp(d, g);
  const double h = 1e-6;
  for (std::size_t i = 0; i < d.storage().size(); ++i) {
    InverseDepthMap dp = d, dm = d;
    dp.storage()[i] += h;
    dm.storage()[i] -= h;
    const ImageBuffer np = normalize_inverse_depth(dp);
    const ImageBuffer nm = normalize_inverse_depth(dm);
    double fd = 0.0;
    for (std::size_t k = 0; k < g.storage().size(); ++k) fd += g.storage()[k] * (np.storage()[k] - nm.storage()[k]);
    EXPECT_NEAR(fd / (2 * h), vjp.storage()[i], 1e-8);
  }
  EXPECT_THROW(normalize_inverse_depth_vjp(d, ImageBuffer(4, 5)), ShapeMismatch);
}

TEST(Ssim, IdenticalAndConstantInputs) {
  std::mt19937_64 rng(4);
  const ImageBuffer a = ddvo::testing::random_image(rng, 9, 7);
  const ImageBuffer s = ssim(a, a);
  EXPECT_EQ(s.width(), 7);
  EXPECT_EQ(s.height(), 5);
  for (double v : s.storage()) EXPECT_NEAR(v, 1.0, 1e-14);
  const ImageBuffer h = ssim(ImageBuffer(4, 4, 1, 0.5), ImageBuffer(4, 4, 1, 0.5));
  for (double v : h.storage()) EXPECT_DOUBLE_EQ(v, 1.0);
}

// Constant windows have zero variance and covariance, so the contrast factor
// reduces to c2 / c2.
TEST(Ssim, ConstantWindowsClosedForm) {
  const LossWeights w;
  const double expected = (2 * 0.2 * 0.8 + w.ssim_c1) * w.ssim_c2 / ((0.04 + 0.64 + w.ssim_c1) * w.ssim_c2);
  const ImageBuffer s = ssim(ImageBuffer(5, 5, 1, 0.2), ImageBuffer(5, 5, 1, 0.8));
  for (double v : s.storage()) EXPECT_NEAR(v, expected, 1e-15);
}

TEST(Ssim, RangeAndErrors) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    const ImageBuffer a = ddvo::testing::random_image(rng, 8, 8);
    ImageBuffer b = ddvo::testing::random_image(rng, 8, 8);
    if (i % 2) b = scaled(a, -1.0);
    const ImageBuffer m = ssim(a, b);
    for (double v : m.storage()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(ssim(ImageBuffer(2, 5), ImageBuffer(2, 5)), GridTooSmall);
  EXPECT_THROW(ssim(ImageBuffer(5, 5), ImageBuffer(5, 4)), ShapeMismatch);
}

TEST(Appearance, IdentityOnSameImageIsZero) {
  std::mt19937_64 rng(6);
  const ImageBuffer img = ddvo::testing::smooth_image(20, 16);
  const InverseDepthMap d = positive_map(rng, 20, 16);
  // Dyadic intrinsics keep the identity warp exactly on the lattice.
  const CameraIntrinsics k{16.0, 16.0, 9.5, 7.5};
  for (int s = 0; s < kLossScales; ++s) {
    const AppearanceResult a = appearance_loss(img, img, d, Pose6D::identity(), k, s);
    EXPECT_EQ(a.loss, 0.0) << s;
    for (double v : a.grad_depth.storage()) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(a.grad_pose.isZero(0.0));
  }
}

TEST(Appearance, ConstantOffsetOnCoarseScale) {
  const ImageBuffer ref = ddvo::testing::smooth_image(20, 16);
  ImageBuffer src = ref;
  for (double& v : src.storage()) v += 0.1;
  const CameraIntrinsics k{16.0, 16.0, 9.5, 7.5};
  const AppearanceResult a = appearance_loss(ref, src, InverseDepthMap(20, 16, 1, 0.5), {}, k, 2);
  EXPECT_NEAR(a.loss, 0.1, 1e-12);
  EXPECT_EQ(a.pixels_used, 20u * 16u);
}

TEST(Appearance, FinestScaleUsesCompleteWindows) {
  const ImageBuffer ref = ddvo::testing::smooth_image(20, 16);
  const CameraIntrinsics k = default_camera(20, 16);
  Pose6D p;
  p.t = Vec3(0.05, 0.0, 0.0);
  const AppearanceResult fine = appearance_loss(ref, ref, InverseDepthMap(20, 16, 1, 1.0), p, k, 0);
  const AppearanceResult coarse = appearance_loss(ref, ref, InverseDepthMap(20, 16, 1, 1.0), p, k, 1);
  EXPECT_LT(fine.pixels_used, coarse.pixels_used);
  EXPECT_LE(fine.pixels_used, 18u * 14u);
}

TEST(Appearance, ErrorsAndNonNegativity) {
  std::mt19937_64 rng(7);
  const ImageBuffer ref = ddvo::testing::random_image(rng, 16, 16, 3);
  const ImageBuffer src = ddvo::testing::random_image(rng, 16, 16, 3);
  const InverseDepthMap d = positive_map(rng, 16, 16);
  const CameraIntrinsics k = default_camera(16, 16);
  for (int s = 0; s < kLossScales; ++s) EXPECT_GE(appearance_loss(ref, src, d, {}, k, s).loss, 0.0);
  Pose6D far;
  far.t = Vec3(20.0, 0.0, 0.0);
  EXPECT_THROW(appearance_loss(ref, src, d, far, k, 1), DegenerateOverlap);
  EXPECT_THROW(appearance_loss(ref, src, d, {}, k, 4), ConfigError);
  EXPECT_THROW(appearance_loss(ref, ddvo::testing::random_image(rng, 16, 16, 1), d, {}, k, 1), ShapeMismatch);
}

TEST(Appearance, JointRescalingInvariance) {
  std::mt19937_64 rng(8);
  const detail::RandomInstance inst = detail::random_instance(rng, 24, 24, 3);
  for (double s : {0.5, 0.37, 3.0}) {
    Pose6D q = inst.pose;
    q.t /= s;
    for (int k = 0; k < kLossScales; ++k) {
      const double a = appearance_loss(inst.ref, inst.src, inst.depth, inst.pose, inst.camera, k).loss;
      const double b = appearance_loss(inst.ref, inst.src, scaled(inst.depth, s), q, inst.camera, k).loss;
      EXPECT_NEAR(a, b, 1e-10) << s << " " << k;
    }
  }
}

TEST(Smoothness, AffineDepthIsFree) {
  std::mt19937_64 rng(9);
  InverseDepthMap d(12, 10, 1);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 12; ++x) d.at(x, y) = 0.5 + 0.125 * x - 0.0625 * y;
  }
  const PriorResult r = smoothness_prior(d, ddvo::testing::random_image(rng, 12, 10, 3));
  EXPECT_EQ(r.loss, 0.0);
}

TEST(Smoothness, QuadraticOnFlatImage) {
  InverseDepthMap d(9, 7, 1);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 9; ++x) d.at(x, y) = static_cast<double>(x) * x;
  }
  EXPECT_EQ(smoothness_prior(d, ImageBuffer(9, 7, 1, 0.3)).loss, 2.0);
}

TEST(Smoothness, EdgeAwareWeight) {
  InverseDepthMap d(5, 5, 1, 0.0);
  d.at(2, 2) = 1.0;  // only the centre stencil and its neighbours see it
  ImageBuffer flat(5, 5, 1, 0.0);
  ImageBuffer edgy = flat;
  edgy.at(2, 2) = 1.0;
  EXPECT_LT(smoothness_prior(d, edgy).loss, smoothness_prior(d, flat).loss);
}

TEST(Smoothness, PositivelyHomogeneous) {
  std::mt19937_64 rng(10);
  const InverseDepthMap d = positive_map(rng, 16, 12);
  const ImageBuffer img = ddvo::testing::random_image(rng, 16, 12);
  const double base = smoothness_prior(d, img).loss;
  EXPECT_GT(base, 0.0);
  for (double s : {0.5, 2.0, 0.125}) EXPECT_EQ(smoothness_prior(scaled(d, s), img).loss, s * base);
  for (double s : {0.3, 7.0}) EXPECT_NEAR(smoothness_prior(scaled(d, s), img).loss, s * base, 1e-12 * s * base);
  EXPECT_THROW(smoothness_prior(ImageBuffer(2, 4), ImageBuffer(2, 4)), GridTooSmall);
}

TEST(Triplet, StaticSceneWithAffineDepthIsFree) {
  const ImageBuffer img = ddvo::testing::smooth_image(32, 32);
  InverseDepthMap d(32, 32, 1);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) d.at(x, y) = 0.5 + 0.015625 * x;  // dyadic, so pyramid averages stay exact
  }
  const Triplet t{{img, img, img}, {d, d, d}, Pose6D::identity(), Pose6D::identity()};
  // Dyadic intrinsics keep every level's identity warp on the lattice.
  const TripletLoss l = triplet_loss(t, CameraIntrinsics{32.0, 32.0, 15.5, 15.5});
  EXPECT_EQ(l.breakdown.total, 0.0) << l.breakdown.appearance() << " " << l.breakdown.prior();
}

TEST(Triplet, BreakdownIsConsistent) {
  const Triplet t = random_triplet(11);
  const CameraIntrinsics k = default_camera(64, 48);
  const LossWeights w;
  const TripletLoss l = triplet_loss(t, k, w);
  const auto& b = l.breakdown;
  EXPECT_NEAR(b.total, b.appearance() + w.lambda_prior * b.prior(), 1e-12);
  EXPECT_NEAR(b.forward + b.backward, b.appearance(), 1e-12);
  for (double v : b.appearance_per_scale) EXPECT_GT(v, 0.0);
  for (double v : b.prior_per_scale) EXPECT_GT(v, 0.0);
  const TripletLoss no_grad = triplet_loss(t, k, w, false);
  EXPECT_EQ(no_grad.breakdown.total, b.total);
  EXPECT_TRUE(no_grad.grad_depth[0].empty());
}

TEST(Triplet, RescalingLowersTheTotal) {
  const Triplet t = random_triplet(12);
  const CameraIntrinsics k = default_camera(64, 48);
  const double s = 0.5;
  Triplet r = t;
  for (auto& d : r.depths) d = scaled(d, s);
  r.p21.t /= s;
  r.p23.t /= s;
  const LossBreakdown a = triplet_loss(t, k).breakdown;
  const LossBreakdown b = triplet_loss(r, k).breakdown;
  for (int i = 0; i < kLossScales; ++i) EXPECT_NEAR(a.appearance_per_scale[i], b.appearance_per_scale[i], 1e-10);
  EXPECT_EQ(b.prior(), s * a.prior());
  EXPECT_LT(b.total, a.total);
}

TEST(Triplet, NormalizedInputIsScaleFree) {
  const Triplet t = random_triplet(13);
  const CameraIntrinsics k = default_camera(64, 48);
  auto normalized = [](Triplet x, double s) {
    for (auto& d : x.depths) d = normalize_inverse_depth(scaled(d, s));
    return x;
  };
  const double base = triplet_loss(normalized(t, 1.0), k).breakdown.total;
  for (double s : {0.25, 4.0}) EXPECT_EQ(triplet_loss(normalized(t, s), k).breakdown.total, base);
  for (double s : {0.3, 5.0}) EXPECT_NEAR(triplet_loss(normalized(t, s), k).breakdown.total, base, 1e-12 * base);
}

TEST(Triplet, ShapeChecks) {
  Triplet t = random_triplet(14);
  t.depths[2] = InverseDepthMap(64, 47, 1, 0.5);
  EXPECT_THROW(triplet_loss(t, default_camera(64, 48)), ShapeMismatch);
  t = random_triplet(14);
  LossWeights w;
  w.ssim_weight = 1.5;
  EXPECT_THROW(triplet_loss(t, default_camera(64, 48), w), ConfigError);
}

TEST(LossGradients, FiniteDifferenceRows) {
  GradcheckOptions opt;
  opt.instances = 20;
  opt.seed = 5;
  for (const GradcheckRow& r : gradcheck_losses(opt, LossWeights{})) {
    EXPECT_EQ(r.status, GradcheckRow::Status::Pass) << r.component << " " << r.max_rel_error;
    EXPECT_GT(r.compared, 0.9 * (r.compared + r.excluded)) << r.component;
  }
}
