#pragma once

// Differentiable direct visual odometry.
//
// The forward pass unrolls a fixed number of inverse-compositional
// Gauss-Newton steps per pyramid level (no early stopping, so the computation
// graph is fixed). The backward pass replays the recorded steps in reverse
// and returns (d p_out / d D)^T g for a pose seed g. Inverse depth enters
// every step three ways:
//   (a) through the source warp W(x_i; p, d_i) that produces residual r_i,
//   (b) through the Jacobian rows J_i = grad I(x_i) dW/dp|_0 (x_i, d_i),
//   (c) through the damped solve (J^T W J + lambda I)^-1 J^T W, including
//       lambda when it is the relative floor.
// Validity masks are held constant. Paths (b) and (c) can be disabled with
// DdvoSettings::grad_through_jacobian.

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ddvo/dvo.hpp"
#include "ddvo/errors.hpp"
#include "ddvo/geometry.hpp"
#include "ddvo/imaging.hpp"

namespace ddvo {

struct DdvoSettings {
  int unroll_iters = 3;
  int levels = 5;
  std::optional<double> damping;  // empty = relative floor, as in DvoSettings
  Pose6D init_pose;
  bool grad_through_jacobian = true;

  void validate() const {
    if (unroll_iters < 1) throw ConfigError("ddvo.unroll_iters must be >= 1");
    if (levels < 1) throw ConfigError("ddvo.levels must be >= 1");
    if (damping && !(*damping >= 0.0)) throw ConfigError("ddvo.damping must be >= 0");
    if (!init_pose.finite()) throw ConfigError("ddvo init pose must be finite");
  }
};

struct DdvoStep {
  Pose6D pose_in;
  Vec6 delta;
  Mat6 lhs;  // J^T W J + lambda I at this step
  WarpedFrame frame;
};

struct DdvoLevel {
  int level = 0;
  ReferenceSystem system;
  ImageBuffer source;  // grayscale source at this level
  std::vector<DdvoStep> steps;
};

// Everything the backward pass needs, plus the inputs so that the forward
// can be replayed.
struct DdvoTape {
  ImageBuffer ref_img;
  InverseDepthMap ref_depth;
  ImageBuffer src_img;
  CameraIntrinsics camera;
  DdvoSettings settings;
  std::vector<DdvoLevel> levels;  // coarsest first
  Pose6D output;
  bool complete = false;

  std::size_t length() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += l.steps.size();
    return n;
  }
};

struct DdvoForward {
  Pose6D pose;
  DdvoTape tape;
};

struct DdvoGradients {
  InverseDepthMap depth;  // d(g . p_out) / d D
  Vec6 init_pose = Vec6::Zero();
};

namespace detail {

inline DdvoForward ddvo_forward_impl(const ImageBuffer& ref_img, const InverseDepthMap& depth_for_jacobian,
                                     const InverseDepthMap& depth_for_warp, const ImageBuffer& src_img,
                                     const CameraIntrinsics& camera, const DdvoSettings& settings, bool record) {
  settings.validate();
  if (!ref_img.same_grid(src_img) || !ref_img.same_grid(depth_for_jacobian) ||
      !ref_img.same_grid(depth_for_warp)) {
    throw ShapeMismatch("ddvo: reference, depth and source grids differ");
  }
  require_levels(ref_img, settings.levels);
  const ImagePyramid ref_pyr = build_pyramid(to_grayscale(ref_img), settings.levels);
  const ImagePyramid src_pyr = build_pyramid(to_grayscale(src_img), settings.levels);
  const ImagePyramid jac_depth_pyr = build_pyramid(depth_for_jacobian, settings.levels);
  const ImagePyramid warp_depth_pyr = build_pyramid(depth_for_warp, settings.levels);

  DdvoForward out;
  if (record) {
    out.tape.ref_img = ref_img;
    out.tape.ref_depth = depth_for_warp;
    out.tape.src_img = src_img;
    out.tape.camera = camera;
    out.tape.settings = settings;
  }
  Pose6D pose = settings.init_pose;
  for (int level = settings.levels - 1; level >= 0; --level) {
    ReferenceSystem sys = precompute_reference_system(ref_pyr[level], jac_depth_pyr[level], camera.at_level(level),
                                                      settings.damping, false);
    sys.depth = warp_depth_pyr[level].storage();
    DdvoLevel rec;
    rec.level = level;
    for (int it = 0; it < settings.unroll_iters; ++it) {
      WarpedFrame f = warp_source(sys, src_pyr[level], pose);
      check_overlap(f, "ddvo");
      NormalEquations ne;
      const Vec6 delta = gauss_newton_increment(sys, f, &ne);
      const Pose6D next = compose_left(Pose6D::from_vector(delta), pose);
      if (record) rec.steps.push_back(DdvoStep{pose, delta, ne.lhs, std::move(f)});
      pose = next;
    }
    if (record) {
      rec.system = std::move(sys);
      rec.source = src_pyr[level];
      out.tape.levels.push_back(std::move(rec));
    }
  }
  out.pose = pose;
  out.tape.output = pose;
  out.tape.complete = record;
  return out;
}

}  // namespace detail

/// Runs exactly unroll_iters Gauss-Newton steps on each of `levels` pyramid
/// levels, coarsest first, starting from settings.init_pose.
inline DdvoForward ddvo_forward(const ImageBuffer& ref_img, const InverseDepthMap& ref_depth,
                                const ImageBuffer& src_img, const CameraIntrinsics& camera,
                                const DdvoSettings& settings) {
  return detail::ddvo_forward_impl(ref_img, ref_depth, ref_depth, src_img, camera, settings, true);
}

/// Forward pass where J is built from `depth_for_jacobian` and the source warp
/// uses `depth_for_warp`. Perturbing only the latter gives the reference for
/// the warp-only gradient (grad_through_jacobian = false).
inline Pose6D ddvo_forward_detached_jacobian(const ImageBuffer& ref_img, const InverseDepthMap& depth_for_jacobian,
                                             const InverseDepthMap& depth_for_warp, const ImageBuffer& src_img,
                                             const CameraIntrinsics& camera, const DdvoSettings& settings) {
  return detail::ddvo_forward_impl(ref_img, depth_for_jacobian, depth_for_warp, src_img, camera, settings, false)
      .pose;
}

/// Re-runs the forward pass from the inputs stored on the tape.
inline Pose6D replay_forward(const DdvoTape& tape) {
  if (!tape.complete) throw TapeMismatch("replay_forward: tape is incomplete");
  return detail::ddvo_forward_impl(tape.ref_img, tape.ref_depth, tape.ref_depth, tape.src_img, tape.camera,
                                   tape.settings, false)
      .pose;
}

/// Vector-Jacobian product (d p_out / d D)^T grad_pose, plus the gradient with
/// respect to the initial pose.
inline DdvoGradients ddvo_backward(const DdvoTape& tape, std::span<const double> grad_pose) {
  if (grad_pose.size() != 6) {
    throw TapeMismatch("ddvo_backward: pose seed must have 6 entries, got " + std::to_string(grad_pose.size()));
  }
  if (!tape.complete || tape.levels.size() != static_cast<std::size_t>(tape.settings.levels) ||
      tape.length() != static_cast<std::size_t>(tape.settings.levels * tape.settings.unroll_iters)) {
    throw TapeMismatch("ddvo_backward: tape is incomplete");
  }
  const bool through_jacobian = tape.settings.grad_through_jacobian;

  Vec6 gp;
  for (int i = 0; i < 6; ++i) gp(i) = grad_pose[static_cast<std::size_t>(i)];

  // Per-level depth gradients, indexed by pyramid level.
  std::vector<ImageBuffer> level_grad(tape.levels.size());

  for (auto lit = tape.levels.rbegin(); lit != tape.levels.rend(); ++lit) {
    const DdvoLevel& lv = *lit;
    const ReferenceSystem& sys = lv.system;
    const std::size_t n = sys.size();
    ImageBuffer gd(sys.width, sys.height, 1);
    auto& gdv = gd.storage();
    JacobianMatrix adj_j;
    if (through_jacobian) adj_j = JacobianMatrix::Zero(static_cast<Eigen::Index>(n), 6);
    double adj_lambda = 0.0;

    for (auto sit = lv.steps.rbegin(); sit != lv.steps.rend(); ++sit) {
      const DdvoStep& st = *sit;
      const auto [jc_delta, jc_pose] = compose_left_jacobians(st.delta, st.pose_in.vector());
      const Vec6 g_delta = jc_delta.transpose() * gp;
      Vec6 g_pose_in = jc_pose.transpose() * gp;
      const Vec6 y = st.lhs.ldlt().solve(g_delta);
      const auto d_rot = rotation_derivatives(st.pose_in.omega);
      const Vec3& t = st.pose_in.t;
      const WarpedFrame& f = st.frame;
      for (std::size_t i = 0; i < n; ++i) {
        if (!f.mask.valid[i]) continue;
        const auto row = sys.jacobian.row(static_cast<Eigen::Index>(i));
        const double a_r = row.dot(y);  // adjoint of r_i
        const Vec3& g = f.dr_dpoint[i];
        const double di = sys.depth[i];
        gdv[i] += a_r * g.dot(t);
        g_pose_in.head<3>() += (a_r * di) * g;
        const Vec3 xh = homogeneous(sys.points[i]);
        for (int k = 0; k < 3; ++k) g_pose_in(3 + k) += a_r * g.dot(d_rot[k] * xh);
        if (through_jacobian) {
          const double r_i = f.residual[i];
          const double j_delta = row.dot(st.delta);
          adj_j.row(static_cast<Eigen::Index>(i)) +=
              (r_i - j_delta) * y.transpose() - a_r * st.delta.transpose();
        }
      }
      if (through_jacobian) adj_lambda -= y.dot(st.delta);
      gp = g_pose_in;
    }

    if (through_jacobian) {
      const double lambda_scale = sys.relative_damping ? adj_lambda * 2.0 * kRelativeDamping / 6.0 : 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = sys.jacobian.row(static_cast<Eigen::Index>(i));
        Eigen::Matrix<double, 1, 6> a = adj_j.row(static_cast<Eigen::Index>(i));
        if (lambda_scale != 0.0) a += lambda_scale * row;
        // dJ_i / dd_i touches only the translation block: g^T [[1,0,-u],[0,1,-v]].
        const Eigen::Vector2d& g = sys.gradient[i];
        const NormalizedPoint& x = sys.points[i];
        gdv[i] += a(0) * g.x() + a(1) * g.y() + a(2) * (-g.x() * x.u - g.y() * x.v);
      }
    }
    level_grad[static_cast<std::size_t>(lv.level)] = std::move(gd);
  }

  // Pull coarse-level gradients back through the area-average pyramid.
  for (std::size_t l = level_grad.size() - 1; l > 0; --l) {
    const ImageBuffer& finer = level_grad[l - 1];
    const ImageBuffer up = downsample2_adjoint(level_grad[l], finer.width(), finer.height());
    auto& dst = level_grad[l - 1].storage();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += up.storage()[i];
  }

  DdvoGradients out;
  out.depth = std::move(level_grad[0]);
  out.init_pose = gp;
  return out;
}

/// Dense 6 x N Jacobian d p_out / d D, one backward pass per unit seed.
/// Test-scale helper.
inline Eigen::Matrix<double, 6, Eigen::Dynamic> pose_depth_jacobian_dense(const ImageBuffer& ref_img,
                                                                         const InverseDepthMap& ref_depth,
                                                                         const ImageBuffer& src_img,
                                                                         const CameraIntrinsics& camera,
                                                                         const DdvoSettings& settings) {
  constexpr std::size_t kMaxPixels = 4096;
  if (ref_depth.pixel_count() > kMaxPixels) {
    throw InstanceTooLarge("pose_depth_jacobian_dense: " + std::to_string(ref_depth.pixel_count()) +
                           " pixels exceeds the limit of " + std::to_string(kMaxPixels));
  }
  const DdvoForward fwd = ddvo_forward(ref_img, ref_depth, src_img, camera, settings);
  Eigen::Matrix<double, 6, Eigen::Dynamic> jac(6, static_cast<Eigen::Index>(ref_depth.pixel_count()));
  for (int r = 0; r < 6; ++r) {
    std::array<double, 6> seed{};
    seed[static_cast<std::size_t>(r)] = 1.0;
    const DdvoGradients g = ddvo_backward(fwd.tape, seed);
    for (std::size_t i = 0; i < g.depth.pixel_count(); ++i) jac(r, static_cast<Eigen::Index>(i)) = g.depth.storage()[i];
  }
  return jac;
}

}  // namespace ddvo
