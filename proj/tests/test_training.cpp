#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "test_util.hpp"

using namespace ddvo;

namespace {

TrainConfig short_config(PoseMode mode, int steps) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.steps = steps;
  cfg.lr = 0.05;
  cfg.pose_lr = 0.01;
  cfg.ddvo.levels = 2;
  cfg.hybrid_warmup_steps = 2;
  return cfg;
}

struct Fixture {
  SynthTriplet st = bundled_triplet();
  TrainInputs inputs() const { return TrainInputs{st.triplet.images, st.camera, std::nullopt}; }
  GroundTruth truth() const { return GroundTruth{st.triplet.depths, st.triplet.p21, st.triplet.p23}; }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST(DepthParam, DecodeStaysInRangeAndInvertsLogit) {
  std::mt19937_64 rng(3);
  const DepthParam p = DepthParam::initial(9, 7, rng);
  const InverseDepthMap d = p.decode();
  for (double v : d.storage()) {
    EXPECT_GT(v, 0.01);
    EXPECT_LT(v, 10.01);
    EXPECT_NEAR(v, 1.0, 0.01 * kDepthScale * 0.25 + 1e-12);
  }
  InverseDepthMap target(3, 1, 1, std::vector<double>{0.05, 1.0, 7.5});
  const InverseDepthMap back = DepthParam::from_inverse_depth(target).decode();
  for (int x = 0; x < 3; ++x) EXPECT_NEAR(back.at(x, 0), target.at(x, 0), 1e-12);

  DepthParam extreme{ImageBuffer(2, 1, 1, std::vector<double>{-50.0, 50.0})};
  const InverseDepthMap e = extreme.decode();
  EXPECT_GE(e.at(0, 0), 0.01);
  EXPECT_LE(e.at(1, 0), 10.01);
}

TEST(DepthParam, InitialNoiseIsSeeded) {
  std::mt19937_64 a(5), b(5), c(6);
  EXPECT_EQ(DepthParam::initial(4, 4, a).logits, DepthParam::initial(4, 4, b).logits);
  EXPECT_FALSE(DepthParam::initial(4, 4, a).logits == DepthParam::initial(4, 4, c).logits);
}

TEST(DepthParam, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  DepthParam p{ddvo::testing::random_image(rng, 5, 4)};
  for (double& v : p.logits.storage()) v = 4.0 * v - 2.0;
  const ImageBuffer upstream = ddvo::testing::random_image(rng, 5, 4);
  const ImageBuffer g = p.backward(upstream);
  const double h = 1e-6;
  for (std::size_t i = 0; i < g.storage().size(); ++i) {
    DepthParam plus = p, minus = p;
    plus.logits.storage()[i] += h;
    minus.logits.storage()[i] -= h;
    const double fd = (plus.decode().storage()[i] - minus.decode().storage()[i]) / (2 * h);
    EXPECT_NEAR(g.storage()[i], upstream.storage()[i] * fd, 1e-8);
  }
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  AdamState s;
  std::vector<double> x{1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  adam_step(s, x, g);
  EXPECT_EQ(x, (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  for (double g : {1e-3, 1.0, 250.0}) {
    AdamState s;
    std::vector<double> x{0.0, 0.0};
    const std::vector<double> grads{g, -g};
    adam_step(s, x, grads);
    EXPECT_NEAR(x[0], -s.lr, s.lr * 1e-5);
    EXPECT_NEAR(x[1], s.lr, s.lr * 1e-5);
  }
}

TEST(Adam, MatchesReferenceOnQuadratic) {
  // f(x) = 0.5 * a * (x - b)^2, plain scalar Adam written out by hand.
  const double a = 3.0, b = 0.7, lr = 0.05;
  double xr = -1.0, m = 0.0, v = 0.0;
  AdamState s;
  s.lr = lr;
  std::vector<double> x{-1.0};
  for (int k = 1; k <= 10; ++k) {
    const double gr = a * (xr - b);
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    const double mh = m / (1.0 - std::pow(0.9, k));
    const double vh = v / (1.0 - std::pow(0.999, k));
    xr -= lr * mh / (std::sqrt(vh) + 1e-8);

    const std::vector<double> g{a * (x[0] - b)};
    adam_step(s, x, g);
    EXPECT_NEAR(x[0], xr, 1e-12) << "step " << k;
  }
  EXPECT_EQ(s.step, 10);
}

TEST(Adam, ShapeMismatch) {
  AdamState s;
  std::vector<double> x(3, 0.0);
  EXPECT_THROW(adam_step(s, x, std::vector<double>(2, 0.0)), ShapeMismatch);
  adam_step(s, x, std::vector<double>(3, 1.0));
  std::vector<double> y(4, 0.0);
  EXPECT_THROW(adam_step(s, y, std::vector<double>(4, 1.0)), ShapeMismatch);
}

TEST(TrainConfig, ModeNamesRoundTrip) {
  for (PoseMode m : {PoseMode::FixedPoseGt, PoseMode::PoseParam, PoseMode::Ddvo, PoseMode::DdvoHybrid, PoseMode::DvoEm}) {
    EXPECT_EQ(pose_mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(pose_mode_from_string("ddvo_hybrid"), ConfigError);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.steps = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.hybrid_iters = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.ddvo.unroll_iters = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TrainTriplet, FixedPoseGtNeedsGroundTruthPoses) {
  const Fixture& f = fixture();
  const TrainConfig cfg = short_config(PoseMode::FixedPoseGt, 1);
  EXPECT_THROW(train_triplet(f.inputs(), nullptr, cfg), ConfigError);
  GroundTruth partial{f.st.triplet.depths, f.st.triplet.p21, std::nullopt};
  EXPECT_THROW(train_triplet(f.inputs(), &partial, cfg), ConfigError);
}

TEST(TrainTriplet, ShapeChecks) {
  const Fixture& f = fixture();
  TrainInputs in = f.inputs();
  in.initial_depth = std::array<InverseDepthMap, 3>{InverseDepthMap(4, 4, 1, 1.0), InverseDepthMap(4, 4, 1, 1.0),
                                                    InverseDepthMap(4, 4, 1, 1.0)};
  EXPECT_THROW(train_triplet(in, nullptr, short_config(PoseMode::PoseParam, 1)), ShapeMismatch);
  TrainInputs bad = f.inputs();
  bad.images[2] = ImageBuffer(10, 10, 1, 0.5);
  EXPECT_THROW(train_triplet(bad, nullptr, short_config(PoseMode::PoseParam, 1)), ShapeMismatch);
}

TEST(TrainTriplet, EveryModeProducesAFullTrace) {
  const Fixture& f = fixture();
  const GroundTruth gt = f.truth();
  for (PoseMode m : {PoseMode::FixedPoseGt, PoseMode::PoseParam, PoseMode::Ddvo, PoseMode::DdvoHybrid, PoseMode::DvoEm}) {
    for (bool normalize : {false, true}) {
      TrainConfig cfg = short_config(m, 4);
      cfg.normalize_depth = normalize;
      const TrainTrace trace = train_triplet(f.inputs(), &gt, cfg);
      ASSERT_EQ(trace.status, TrainTrace::Status::Completed) << to_string(m) << ": " << trace.message;
      ASSERT_EQ(trace.records.size(), 4u) << to_string(m);
      for (std::size_t k = 0; k < trace.records.size(); ++k) {
        const TrainRecord& r = trace.records[k];
        EXPECT_EQ(r.step, static_cast<int>(k));
        EXPECT_TRUE(std::isfinite(r.total));
        EXPECT_NEAR(r.total, r.appearance + cfg.weights.lambda_prior * r.prior, 1e-12 * std::max(1.0, r.total));
        EXPECT_GT(r.raw_mean_inv_depth, 0.01);
        EXPECT_TRUE(std::isfinite(r.gt_error));
        if (normalize) EXPECT_NEAR(r.mean_inv_depth, 1.0, 1e-9);
        else EXPECT_EQ(r.mean_inv_depth, r.raw_mean_inv_depth);
      }
      for (const auto& d : trace.final_depth) {
        EXPECT_EQ(d.width(), f.st.triplet.images[0].width());
        EXPECT_EQ(d.height(), f.st.triplet.images[0].height());
      }
    }
  }
}

TEST(TrainTriplet, FixedPoseGtRecordsGroundTruthPoses) {
  const Fixture& f = fixture();
  const GroundTruth gt = f.truth();
  TrainConfig cfg = short_config(PoseMode::FixedPoseGt, 2);
  cfg.normalize_depth = false;
  const TrainTrace trace = train_triplet(f.inputs(), &gt, cfg);
  for (const TrainRecord& r : trace.records) {
    EXPECT_EQ(r.p21.vector(), f.st.triplet.p21.vector());
    EXPECT_EQ(r.p23.vector(), f.st.triplet.p23.vector());
  }
}

TEST(TrainTriplet, SeededRunsAreBitReproducible) {
  const Fixture& f = fixture();
  const GroundTruth gt = f.truth();
  for (PoseMode m : {PoseMode::Ddvo, PoseMode::DdvoHybrid}) {
    const TrainConfig cfg = short_config(m, 5);
    const TrainTrace a = train_triplet(f.inputs(), &gt, cfg);
    const TrainTrace b = train_triplet(f.inputs(), &gt, cfg);
    EXPECT_EQ(trace_csv(a), trace_csv(b));
    for (int i = 0; i < 3; ++i) EXPECT_EQ(a.final_depth[i], b.final_depth[i]);
    TrainConfig other = cfg;
    other.seed = 1;
    EXPECT_NE(trace_csv(a), trace_csv(train_triplet(f.inputs(), &gt, other)));
  }
}

TEST(TrainTriplet, NormalizedLossIgnoresDepthScale) {
  const Fixture& f = fixture();
  TrainInputs in = f.inputs();
  in.initial_depth = f.st.triplet.depths;
  TrainInputs scaled = in;
  for (auto& d : *scaled.initial_depth) {
    for (double& v : d.storage()) v *= 2.0;
  }
  TrainConfig cfg = short_config(PoseMode::PoseParam, 1);
  const double a = train_triplet(in, nullptr, cfg).records[0].total;
  const double b = train_triplet(scaled, nullptr, cfg).records[0].total;
  EXPECT_NEAR(a, b, 1e-12 * a);
  cfg.normalize_depth = false;
  EXPECT_NE(train_triplet(in, nullptr, cfg).records[0].total, train_triplet(scaled, nullptr, cfg).records[0].total);
}

TEST(TrainTriplet, GroundTruthStartStaysPut) {
  const Fixture& f = fixture();
  const GroundTruth gt = f.truth();
  TrainInputs in = f.inputs();
  in.initial_depth = f.st.triplet.depths;
  TrainConfig cfg;
  cfg.mode = PoseMode::FixedPoseGt;
  cfg.steps = 100;
  const TrainTrace trace = train_triplet(in, &gt, cfg);
  ASSERT_EQ(trace.status, TrainTrace::Status::Completed);
  const InverseDepthMap& d0 = f.st.triplet.depths[1];
  const InverseDepthMap& d1 = trace.final_depth[1];
  double lo = d0.storage()[0], hi = lo, moved = 0.0;
  for (std::size_t i = 0; i < d0.storage().size(); ++i) {
    lo = std::min(lo, d0.storage()[i]);
    hi = std::max(hi, d0.storage()[i]);
    moved += std::abs(d1.storage()[i] - d0.storage()[i]);
  }
  moved /= static_cast<double>(d0.storage().size());
  EXPECT_LT(moved, 0.01 * (hi - lo));
}

TEST(TrainTriplet, EmAlternationIsDvoEmMode) {
  const Fixture& f = fixture();
  const GroundTruth gt = f.truth();
  TrainConfig cfg = short_config(PoseMode::Ddvo, 3);
  const TrainTrace em = em_alternation(f.inputs(), &gt, cfg);
  cfg.mode = PoseMode::DvoEm;
  const TrainTrace direct = train_triplet(f.inputs(), &gt, cfg);
  EXPECT_EQ(trace_csv(em), trace_csv(direct));
  for (std::size_t k = 0; k < em.records.size(); ++k) {
    EXPECT_EQ(em.records[k].p21.vector(), direct.records[k].p21.vector());
    EXPECT_EQ(em.records[k].p23.vector(), direct.records[k].p23.vector());
  }
}

TEST(TrainTriplet, EmOnStaticTripletKeepsIdentityPose) {
  const SynthTriplet st = make_triplet(make_scene(bundled_triplet_spec()), Pose6D{}, Pose6D{});
  const TrainConfig cfg = short_config(PoseMode::DvoEm, 3);
  const TrainTrace trace = train_triplet(TrainInputs{st.triplet.images, st.camera, std::nullopt}, nullptr, cfg);
  ASSERT_EQ(trace.records.size(), 3u);
  for (const TrainRecord& r : trace.records) {
    // Identity up to the pixel -> ray -> pixel round off of a non-dyadic camera.
    EXPECT_LT(r.p21.vector().norm(), 1e-12);
    EXPECT_LT(r.p23.vector().norm(), 1e-12);
  }
}

TEST(TrainTriplet, RunawayPoseEndsAsDiverged) {
  const Fixture& f = fixture();
  TrainConfig cfg = short_config(PoseMode::PoseParam, 20);
  cfg.pose_lr = 50.0;
  const TrainTrace trace = train_triplet(f.inputs(), nullptr, cfg);
  EXPECT_EQ(trace.status, TrainTrace::Status::Diverged);
  EXPECT_LT(trace.records.size(), 20u);
  EXPECT_FALSE(trace.message.empty());
}

TEST(TraceCsv, HeaderAndRows) {
  TrainTrace t;
  TrainRecord r;
  r.step = 0;
  r.total = 0.5;
  r.appearance = 0.25;
  r.prior = 0.25;
  r.mean_inv_depth = 1.0;
  r.raw_mean_inv_depth = 0.75;
  t.records.push_back(r);
  r.step = 1;
  r.gt_error = 0.125;
  t.records.push_back(r);
  const std::string csv = trace_csv(t);
  const std::string header = "step,total,appearance,prior,mean_inv_depth,gt_error\n";
  ASSERT_EQ(csv.substr(0, header.size()), header);
  const std::string rows = csv.substr(header.size());
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 2);
  EXPECT_EQ(rows.substr(0, rows.find('\n')), "0," + format_double(0.5) + "," + format_double(0.25) + "," +
                                                 format_double(0.25) + "," + format_double(0.75) + ",");
}
