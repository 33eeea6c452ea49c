#pragma once

// Desk-scale optimization of per-pixel inverse depth over an image triplet.
// The depth of each frame is a raster of logits decoded through
// sigmoid * 10 + 0.01; poses come from ground truth, from free parameters,
// from the differentiable solver, or from the plain solver held constant.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ddvo/ddvo.hpp"
#include "ddvo/dvo.hpp"
#include "ddvo/errors.hpp"
#include "ddvo/image_io.hpp"
#include "ddvo/losses.hpp"
#include "ddvo/metrics.hpp"

namespace ddvo {

// ---------------------------------------------------------------------------
// Depth parameterization

inline constexpr double kDepthScale = 10.0;
inline constexpr double kDepthOffset = 0.01;

struct DepthParam {
  ImageBuffer logits;

  static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

  static double logit_for(double d) {
    const double s = (d - kDepthOffset) / kDepthScale;
    return std::log(s / (1.0 - s));
  }

  /// Constant logit decoding to d = 1 plus seeded uniform noise in [-0.01, 0.01].
  static DepthParam initial(int width, int height, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> noise(-0.01, 0.01);
    DepthParam p{ImageBuffer(width, height, 1, logit_for(1.0))};
    for (double& v : p.logits.storage()) v += noise(rng);
    return p;
  }

  static DepthParam from_inverse_depth(const InverseDepthMap& d) {
    DepthParam p{ImageBuffer(d.width(), d.height(), 1)};
    for (std::size_t i = 0; i < d.storage().size(); ++i) p.logits.storage()[i] = logit_for(d.storage()[i]);
    return p;
  }

  InverseDepthMap decode() const {
    InverseDepthMap d(logits.width(), logits.height(), 1);
    for (std::size_t i = 0; i < d.storage().size(); ++i) {
      d.storage()[i] = sigmoid(logits.storage()[i]) * kDepthScale + kDepthOffset;
    }
    return d;
  }

  /// Chains a gradient on the decoded depth back to the logits.
  ImageBuffer backward(const ImageBuffer& grad_depth) const {
    ImageBuffer g(logits.width(), logits.height(), 1);
    for (std::size_t i = 0; i < g.storage().size(); ++i) {
      const double s = sigmoid(logits.storage()[i]);
      g.storage()[i] = grad_depth.storage()[i] * kDepthScale * s * (1.0 - s);
    }
    return g;
  }
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  long step = 0;
  std::vector<double> m;
  std::vector<double> v;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update, in place.
inline void adam_step(AdamState& s, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size()) throw ShapeMismatch("adam_step: parameter and gradient sizes differ");
  if (s.m.empty() && s.v.empty()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  if (s.m.size() != params.size() || s.v.size() != params.size()) {
    throw ShapeMismatch("adam_step: state was built for " + std::to_string(s.m.size()) + " parameters, got " +
                        std::to_string(params.size()));
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    const double mh = s.m[i] / c1;
    const double vh = s.v[i] / c2;
    params[i] -= s.lr * mh / (std::sqrt(vh) + s.eps);
  }
}

// ---------------------------------------------------------------------------
// Configuration and trace

enum class PoseMode { FixedPoseGt, PoseParam, Ddvo, DdvoHybrid, DvoEm };

inline std::string to_string(PoseMode m) {
  switch (m) {
    case PoseMode::FixedPoseGt:
      return "fixed-pose-gt";
    case PoseMode::PoseParam:
      return "pose-param";
    case PoseMode::Ddvo:
      return "ddvo";
    case PoseMode::DdvoHybrid:
      return "ddvo-hybrid";
    case PoseMode::DvoEm:
      return "dvo-em";
  }
  return "?";
}

inline PoseMode pose_mode_from_string(const std::string& s) {
  for (PoseMode m : {PoseMode::FixedPoseGt, PoseMode::PoseParam, PoseMode::Ddvo, PoseMode::DdvoHybrid, PoseMode::DvoEm}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown training mode '" + s + "'");
}

struct TrainConfig {
  PoseMode mode = PoseMode::Ddvo;
  bool normalize_depth = true;
  int steps = 500;
  LossWeights weights;
  DdvoSettings ddvo;  // used from the identity in ddvo and dvo-em modes
  double lr = 1e-4;
  double pose_lr = 1e-4;
  std::uint64_t seed = 0;
  // ddvo-hybrid: pose-param warmup, then the solver on the finest level.
  int hybrid_warmup_steps = 200;
  int hybrid_levels = 1;
  int hybrid_iters = 3;

  void validate() const {
    if (steps < 1) throw ConfigError("train.steps must be >= 1");
    if (!(lr > 0.0) || !(pose_lr > 0.0)) throw ConfigError("train.lr and train.pose_lr must be > 0");
    if (hybrid_warmup_steps < 0) throw ConfigError("train.hybrid_warmup_steps must be >= 0");
    if (hybrid_levels < 1 || hybrid_iters < 1) throw ConfigError("train.hybrid_levels and hybrid_iters must be >= 1");
    weights.validate();
    ddvo.validate();
  }
};

struct TrainRecord {
  int step = 0;
  double total = 0.0;
  double appearance = 0.0;
  double prior = 0.0;
  double mean_inv_depth = 0.0;      // mean of the depth entering the loss
  double raw_mean_inv_depth = 0.0;  // mean of the decoded depth
  double gt_error = std::numeric_limits<double>::quiet_NaN();
  Pose6D p21;
  Pose6D p23;
};

struct TrainTrace {
  enum class Status { Completed, Diverged };
  std::vector<TrainRecord> records;
  Status status = Status::Completed;
  std::string message;
  std::array<InverseDepthMap, 3> final_depth;  // decoded, before normalization
};

struct TrainInputs {
  std::array<ImageBuffer, 3> images;
  CameraIntrinsics camera;
  std::optional<std::array<InverseDepthMap, 3>> initial_depth;  // default: d = 1 plus small noise
};

struct GroundTruth {
  std::optional<std::array<InverseDepthMap, 3>> depths;
  std::optional<Pose6D> p21;
  std::optional<Pose6D> p23;
};

/// Median-aligned abs_rel of the depths (1/d) averaged over the three frames.
inline double triplet_depth_error(const std::array<InverseDepthMap, 3>& pred, const std::array<InverseDepthMap, 3>& gt) {
  double e = 0.0;
  for (int i = 0; i < 3; ++i) {
    e += depth_metrics(inverse_depth_to_depth(pred[i]), inverse_depth_to_depth(gt[i]), nullptr, true).abs_rel;
  }
  return e / 3.0;
}

namespace detail {

inline double mean3(const std::array<InverseDepthMap, 3>& d) {
  return (d[0].mean() + d[1].mean() + d[2].mean()) / 3.0;
}

inline void accumulate(ImageBuffer& dst, const ImageBuffer& src) {
  for (std::size_t i = 0; i < dst.storage().size(); ++i) dst.storage()[i] += src.storage()[i];
}

}  // namespace detail

/// Runs cfg.steps optimization steps. Record k holds the state before update
/// k. A non-finite loss, or a pose that leaves too little overlap, ends the run
/// with Status::Diverged.
inline TrainTrace train_triplet(const TrainInputs& in, const GroundTruth* gt, const TrainConfig& cfg) {
  cfg.validate();
  const int w = in.images[0].width();
  const int h = in.images[0].height();
  for (const auto& img : in.images) {
    if (img.width() != w || img.height() != h || img.channels() != in.images[0].channels()) {
      throw ShapeMismatch("train_triplet: images must share one grid");
    }
  }
  if (cfg.mode == PoseMode::FixedPoseGt && !(gt && gt->p21 && gt->p23)) {
    throw ConfigError("fixed-pose-gt mode needs ground-truth poses");
  }
  const bool have_gt_depth = gt && gt->depths.has_value();

  // With normalized depth the scene is expressed in the reference frame's
  // mean-one gauge, so metric translations are rescaled to match.
  double gt_gauge = 1.0;
  if (cfg.mode == PoseMode::FixedPoseGt && cfg.normalize_depth) {
    if (!have_gt_depth) throw ConfigError("fixed-pose-gt with normalized depth needs ground-truth depth for the gauge");
    gt_gauge = (*gt->depths)[1].mean();
  }

  std::mt19937_64 rng(cfg.seed);
  std::array<DepthParam, 3> params{DepthParam::initial(w, h, rng), DepthParam::initial(w, h, rng),
                                   DepthParam::initial(w, h, rng)};
  if (in.initial_depth) {
    for (int i = 0; i < 3; ++i) {
      const InverseDepthMap& d0 = (*in.initial_depth)[static_cast<std::size_t>(i)];
      if (d0.width() != w || d0.height() != h || d0.channels() != 1) {
        throw ShapeMismatch("train_triplet: initial depth grid differs from the images");
      }
      params[static_cast<std::size_t>(i)] = DepthParam::from_inverse_depth(d0);
    }
  }
  std::vector<double> pose_params(12, 0.0);  // p21 then p23

  AdamState depth_opt;
  depth_opt.lr = cfg.lr;
  AdamState pose_opt;
  pose_opt.lr = cfg.pose_lr;
  std::vector<double> flat(3 * static_cast<std::size_t>(w) * h);
  std::vector<double> flat_grad(flat.size());

  DdvoSettings from_identity = cfg.ddvo;
  from_identity.init_pose = Pose6D::identity();
  DvoSettings em_settings;
  em_settings.levels = cfg.ddvo.levels;
  em_settings.max_iters_per_level = cfg.ddvo.unroll_iters;
  em_settings.damping = cfg.ddvo.damping;

  TrainTrace trace;
  for (int step = 0; step < cfg.steps; ++step) {
    std::array<InverseDepthMap, 3> raw;
    std::array<InverseDepthMap, 3> depth;
    for (int i = 0; i < 3; ++i) {
      raw[i] = params[i].decode();
      depth[i] = cfg.normalize_depth ? normalize_inverse_depth(raw[i]) : raw[i];
    }

    Triplet t;
    t.images = in.images;
    t.depths = depth;
    const Pose6D param21 = Pose6D::from_vector(Eigen::Map<const Vec6>(pose_params.data()));
    const Pose6D param23 = Pose6D::from_vector(Eigen::Map<const Vec6>(pose_params.data() + 6));
    const bool warmup = cfg.mode == PoseMode::DdvoHybrid && step < cfg.hybrid_warmup_steps;
    std::optional<DdvoForward> f21;
    std::optional<DdvoForward> f23;
    try {
      switch (cfg.mode) {
        case PoseMode::FixedPoseGt:
          t.p21 = *gt->p21;
          t.p23 = *gt->p23;
          t.p21.t *= gt_gauge;
          t.p23.t *= gt_gauge;
          break;
        case PoseMode::PoseParam:
          t.p21 = param21;
          t.p23 = param23;
          break;
        case PoseMode::Ddvo:
          f21 = ddvo_forward(in.images[1], depth[1], in.images[0], in.camera, from_identity);
          f23 = ddvo_forward(in.images[1], depth[1], in.images[2], in.camera, from_identity);
          t.p21 = f21->pose;
          t.p23 = f23->pose;
          break;
        case PoseMode::DdvoHybrid:
          if (warmup) {
            t.p21 = param21;
            t.p23 = param23;
          } else {
            DdvoSettings s = cfg.ddvo;
            s.levels = cfg.hybrid_levels;
            s.unroll_iters = cfg.hybrid_iters;
            s.init_pose = param21;
            f21 = ddvo_forward(in.images[1], depth[1], in.images[0], in.camera, s);
            s.init_pose = param23;
            f23 = ddvo_forward(in.images[1], depth[1], in.images[2], in.camera, s);
            t.p21 = f21->pose;
            t.p23 = f23->pose;
          }
          break;
        case PoseMode::DvoEm:
          t.p21 = solve_coarse_to_fine(in.images[1], depth[1], in.images[0], in.camera, Pose6D::identity(), em_settings).pose;
          t.p23 = solve_coarse_to_fine(in.images[1], depth[1], in.images[2], in.camera, Pose6D::identity(), em_settings).pose;
          break;
      }
    } catch (const DegenerateOverlap& e) {
      trace.status = TrainTrace::Status::Diverged;
      trace.message = "step " + std::to_string(step) + ": " + e.what();
      break;
    } catch (const SingularSystem& e) {
      trace.status = TrainTrace::Status::Diverged;
      trace.message = "step " + std::to_string(step) + ": " + e.what();
      break;
    }

    TripletLoss loss;
    try {
      loss = triplet_loss(t, in.camera, cfg.weights, true);
    } catch (const DegenerateOverlap& e) {
      trace.status = TrainTrace::Status::Diverged;
      trace.message = "step " + std::to_string(step) + ": " + e.what();
      break;
    }

    TrainRecord rec;
    rec.step = step;
    rec.total = loss.breakdown.total;
    rec.appearance = loss.breakdown.appearance();
    rec.prior = loss.breakdown.prior();
    rec.mean_inv_depth = detail::mean3(depth);
    rec.raw_mean_inv_depth = detail::mean3(raw);
    rec.p21 = t.p21;
    rec.p23 = t.p23;
    if (have_gt_depth) rec.gt_error = triplet_depth_error(raw, *gt->depths);
    trace.records.push_back(rec);
    trace.final_depth = raw;
    if (!std::isfinite(rec.total)) {
      trace.status = TrainTrace::Status::Diverged;
      trace.message = "step " + std::to_string(step) + ": loss is not finite";
      break;
    }

    // Pose gradients feed the solver's backward pass or the pose parameters.
    std::array<ImageBuffer, 3> g = loss.grad_depth;
    Vec6 g_param21 = Vec6::Zero();
    Vec6 g_param23 = Vec6::Zero();
    if (f21) {
      const DdvoGradients b21 = ddvo_backward(f21->tape, std::span<const double>(loss.grad_p21.data(), 6));
      const DdvoGradients b23 = ddvo_backward(f23->tape, std::span<const double>(loss.grad_p23.data(), 6));
      detail::accumulate(g[1], b21.depth);
      detail::accumulate(g[1], b23.depth);
      g_param21 = b21.init_pose;
      g_param23 = b23.init_pose;
    } else if (cfg.mode == PoseMode::PoseParam || warmup) {
      g_param21 = loss.grad_p21;
      g_param23 = loss.grad_p23;
    }

    for (int i = 0; i < 3; ++i) {
      const ImageBuffer gd = cfg.normalize_depth ? normalize_inverse_depth_vjp(raw[i], g[i]) : g[i];
      const ImageBuffer gl = params[i].backward(gd);
      const std::size_t off = static_cast<std::size_t>(i) * w * h;
      std::copy(params[i].logits.storage().begin(), params[i].logits.storage().end(), flat.begin() + off);
      std::copy(gl.storage().begin(), gl.storage().end(), flat_grad.begin() + off);
    }
    adam_step(depth_opt, flat, flat_grad);
    for (int i = 0; i < 3; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * w * h;
      std::copy(flat.begin() + off, flat.begin() + off + static_cast<std::size_t>(w) * h,
                params[i].logits.storage().begin());
    }
    if (cfg.mode == PoseMode::PoseParam || cfg.mode == PoseMode::DdvoHybrid) {
      std::array<double, 12> gp;
      for (int k = 0; k < 6; ++k) {
        gp[static_cast<std::size_t>(k)] = g_param21(k);
        gp[static_cast<std::size_t>(k) + 6] = g_param23(k);
      }
      adam_step(pose_opt, pose_params, gp);
    }
  }
  if (trace.status == TrainTrace::Status::Completed) {
    for (int i = 0; i < 3; ++i) trace.final_depth[i] = params[i].decode();
  }
  return trace;
}

/// Alternates a plain pose solve (held constant) with a depth step.
inline TrainTrace em_alternation(const TrainInputs& in, const GroundTruth* gt, TrainConfig cfg) {
  cfg.mode = PoseMode::DvoEm;
  return train_triplet(in, gt, cfg);
}

inline std::string trace_csv(const TrainTrace& trace) {
  std::string out = "step,total,appearance,prior,mean_inv_depth,gt_error\n";
  for (const TrainRecord& r : trace.records) {
    out += std::to_string(r.step) + "," + format_double(r.total) + "," + format_double(r.appearance) + "," +
           format_double(r.prior) + "," + format_double(r.raw_mean_inv_depth) + "," +
           (std::isnan(r.gt_error) ? std::string() : format_double(r.gt_error)) + "\n";
  }
  return out;
}

inline void write_trace_csv(const std::string& path, const TrainTrace& trace) {
  io::detail::write_atomically(path, trace_csv(trace));
}

}  // namespace ddvo
