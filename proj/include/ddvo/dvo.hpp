#pragma once

// Inverse-compositional Gauss-Newton direct visual odometry.
//
// The reference frame carries intensities I and inverse depths d; the source
// frame carries intensities I'. The solver finds the pose p minimizing
//   sum_i (I'(W(x_i; p, d_i)) - I(x_i))^2
// over pixels whose warp lands in view. The Jacobian J is evaluated once on
// the reference image at p = 0. Each iteration solves
//   (J^T W J + lambda I) dp = J^T W r,   r = I'_p - I,
// and applies p <- T(dp)^-1 T(p) (see compose_left).

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ddvo/errors.hpp"
#include "ddvo/geometry.hpp"
#include "ddvo/imaging.hpp"
#include "ddvo/parallel.hpp"

namespace ddvo {

// Relative Levenberg floor used when no explicit damping is configured:
// lambda = kRelativeDamping * trace(J^T J) / 6.
inline constexpr double kRelativeDamping = 1e-6;
inline constexpr double kMaxCondition = 1e12;
inline constexpr double kMinValidFraction = 0.25;

struct DvoSettings {
  int levels = 1;
  int max_iters_per_level = 20;
  double step_norm_tol = 1e-8;
  std::optional<double> damping;  // absolute; empty = relative floor

  void validate() const {
    if (levels < 1) throw ConfigError("dvo.levels must be >= 1");
    if (max_iters_per_level < 1) throw ConfigError("dvo.max_iters_per_level must be >= 1");
    if (!(step_norm_tol > 0.0)) throw ConfigError("dvo.step_norm_tol must be > 0");
    if (damping && !(*damping >= 0.0)) throw ConfigError("dvo.damping must be >= 0");
  }
};

struct DvoResult {
  Pose6D pose;
  double final_residual = 0.0;       // mean squared error over in-view pixels
  std::vector<int> iterations_used;  // per level, coarsest first
  double valid_fraction = 0.0;
  std::vector<double> residual_history;  // residual before each update, then the final one
};

using JacobianMatrix = Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>;

// Everything precomputed on the reference image of one pyramid level.
struct ReferenceSystem {
  int width = 0;
  int height = 0;
  CameraIntrinsics camera;
  ImageBuffer intensity;                 // grayscale reference
  std::vector<NormalizedPoint> points;   // x_i
  std::vector<double> depth;             // d_i
  std::vector<Eigen::Vector2d> gradient;  // grad I(x_i) scaled to normalized units (gx*fx, gy*fy)
  JacobianMatrix jacobian;               // N x 6
  Eigen::Matrix<double, 6, Eigen::Dynamic> pseudo_inverse;  // (J^T J + lambda I)^-1 J^T
  double damping = 0.0;
  bool relative_damping = false;

  std::size_t size() const { return points.size(); }
};

namespace detail {

inline double condition_number(const Mat6& a) {
  Eigen::SelfAdjointEigenSolver<Mat6> es(a, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || !std::isfinite(hi)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

inline void check_conditioning(const Mat6& a, const char* where) {
  const double c = condition_number(a);
  if (!(c <= kMaxCondition)) {
    throw SingularSystem(std::string(where) + ": normal equations singular (condition " + std::to_string(c) +
                         "); the reference image may be untextured");
  }
}

// Row i of J as a function of d_i: J_i = [d_i * q_i, rot_i] where q_i is the
// translation factor.
inline Eigen::Matrix<double, 1, 6> jacobian_row(const Eigen::Vector2d& g, const NormalizedPoint& x, double d) {
  return g.transpose() * warp_jacobian_identity(x, d);
}

}  // namespace detail

/// Builds J and its damped pseudo-inverse on the reference frame. `damping`
/// empty selects the relative floor kRelativeDamping * trace(J^T J) / 6.
inline ReferenceSystem precompute_reference_system(const ImageBuffer& ref_img, const InverseDepthMap& ref_depth,
                                                   const CameraIntrinsics& camera,
                                                   std::optional<double> damping = std::nullopt,
                                                   bool with_pseudo_inverse = true) {
  if (!ref_img.same_grid(ref_depth)) throw ShapeMismatch("reference image and depth grids differ");
  if (ref_depth.channels() != 1) throw ShapeMismatch("inverse depth map must have one channel");
  ReferenceSystem sys;
  sys.width = ref_img.width();
  sys.height = ref_img.height();
  sys.camera = camera;
  sys.intensity = to_grayscale(ref_img);
  const ImageBuffer grad = spatial_gradient(sys.intensity);
  const std::size_t n = sys.intensity.pixel_count();
  sys.points.resize(n);
  sys.depth.resize(n);
  sys.gradient.resize(n);
  sys.jacobian.resize(static_cast<Eigen::Index>(n), 6);
  for (int y = 0; y < sys.height; ++y) {
    for (int x = 0; x < sys.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * sys.width + x;
      sys.points[i] = camera.normalize(x, y);
      sys.depth[i] = ref_depth.at(x, y);
      sys.gradient[i] = {grad.at(x, y, 0) * camera.fx, grad.at(x, y, 1) * camera.fy};
      sys.jacobian.row(static_cast<Eigen::Index>(i)) =
          detail::jacobian_row(sys.gradient[i], sys.points[i], sys.depth[i]);
    }
  }
  const Mat6 jtj = sys.jacobian.transpose() * sys.jacobian;
  sys.relative_damping = !damping.has_value();
  sys.damping = damping ? *damping : kRelativeDamping * jtj.trace() / 6.0;
  const Mat6 a = jtj + sys.damping * Mat6::Identity();
  detail::check_conditioning(a, "precompute_reference_system");
  if (with_pseudo_inverse) sys.pseudo_inverse = a.ldlt().solve(sys.jacobian.transpose());
  return sys;
}

// Source image resampled at the current warp, with what the backward pass
// needs: per-pixel residual and d r_i / d P_i (P = R x~ + d t).
struct WarpedFrame {
  ValidityMask mask;
  std::vector<double> residual;
  std::vector<Vec3> dr_dpoint;

  double valid_fraction() const { return mask.fraction(); }

  double mean_squared_residual() const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < residual.size(); ++i) {
      if (mask.valid[i]) {
        s += residual[i] * residual[i];
        ++n;
      }
    }
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

/// Warps the grayscale source by pose p over every reference pixel.
inline WarpedFrame warp_source(const ReferenceSystem& sys, const ImageBuffer& src_gray, const Pose6D& p) {
  if (src_gray.width() != sys.width || src_gray.height() != sys.height) {
    throw ShapeMismatch("source and reference grids differ");
  }
  const std::size_t n = sys.size();
  WarpedFrame f;
  f.mask = ValidityMask(sys.width, sys.height);
  f.residual.assign(n, 0.0);
  f.dr_dpoint.assign(n, Vec3::Zero());
  const Rotation3 r = p.rotation();
  const CameraIntrinsics& k = sys.camera;
  parallel_for(n, [&](std::size_t i) {
    const Vec3 pt = warp_point_3d(sys.points[i], r, p.t, sys.depth[i]);
    const auto proj = project(pt);
    if (!proj) return;
    const Vec2 px = k.to_pixel(*proj);
    const BilinearCell cell = locate(src_gray, px.x(), px.y());
    if (!cell.in_view) return;
    f.mask.valid[i] = 1;
    f.residual[i] = sample_channel(src_gray, cell) - sys.intensity.storage()[i];
    const Eigen::Vector2d g = sample_grad_channel(src_gray, cell);
    const double iz = 1.0 / pt.z();
    // d pixel / d P
    const double gu = g.x() * k.fx * iz;
    const double gv = g.y() * k.fy * iz;
    f.dr_dpoint[i] = Vec3(gu, gv, -(gu * pt.x() + gv * pt.y()) * iz);
  });
  return f;
}

struct NormalEquations {
  Mat6 lhs = Mat6::Zero();  // J^T W J + lambda I
  Vec6 rhs = Vec6::Zero();  // J^T W r
};

inline NormalEquations masked_normal_equations(const ReferenceSystem& sys, const WarpedFrame& f) {
  NormalEquations ne;
  for (std::size_t i = 0; i < sys.size(); ++i) {
    if (!f.mask.valid[i]) continue;
    const auto row = sys.jacobian.row(static_cast<Eigen::Index>(i));
    ne.lhs.noalias() += row.transpose() * row;
    ne.rhs.noalias() += row.transpose() * f.residual[i];
  }
  ne.lhs += sys.damping * Mat6::Identity();
  return ne;
}

namespace detail {

inline void check_overlap(const WarpedFrame& f, const char* where) {
  if (f.valid_fraction() < kMinValidFraction) {
    throw DegenerateOverlap(std::string(where) + ": only " + std::to_string(100.0 * f.valid_fraction()) +
                            "% of reference pixels are in view");
  }
}

// One Gauss-Newton update from pose p. Returns the increment.
inline Vec6 gauss_newton_increment(const ReferenceSystem& sys, const WarpedFrame& f, NormalEquations* out = nullptr) {
  NormalEquations ne = masked_normal_equations(sys, f);
  check_conditioning(ne.lhs, "gauss_newton");
  const Vec6 delta = ne.lhs.ldlt().solve(ne.rhs);
  if (out) *out = ne;
  return delta;
}

struct LevelOutcome {
  Pose6D pose;
  int iterations = 0;
};

inline LevelOutcome iterate_level(const ReferenceSystem& sys, const ImageBuffer& src_gray, const Pose6D& init,
                                  int max_iters, double step_norm_tol, bool early_stop,
                                  std::vector<double>* history) {
  LevelOutcome out{init, 0};
  for (int it = 0; it < max_iters; ++it) {
    const WarpedFrame f = warp_source(sys, src_gray, out.pose);
    check_overlap(f, "dvo");
    if (history) history->push_back(f.mean_squared_residual());
    const Vec6 delta = gauss_newton_increment(sys, f);
    out.pose = compose_left(Pose6D::from_vector(delta), out.pose);
    ++out.iterations;
    if (early_stop && delta.norm() < step_norm_tol) break;
  }
  return out;
}

inline void require_levels(const ImageBuffer& img, int levels) {
  const int need = 1 << (levels - 1);
  if (img.width() < need || img.height() < need) {
    throw GridTooSmall("image " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                       " cannot support " + std::to_string(levels) + " pyramid levels");
  }
}

}  // namespace detail

/// Gauss-Newton on a single resolution.
inline DvoResult solve_level(const ImageBuffer& ref_img, const InverseDepthMap& ref_depth, const ImageBuffer& src_img,
                             const CameraIntrinsics& camera, const Pose6D& init, const DvoSettings& settings) {
  settings.validate();
  if (!ref_img.same_grid(src_img)) throw ShapeMismatch("reference and source grids differ");
  const ReferenceSystem sys = precompute_reference_system(ref_img, ref_depth, camera, settings.damping, false);
  const ImageBuffer src = to_grayscale(src_img);
  DvoResult res;
  const auto lvl = detail::iterate_level(sys, src, init, settings.max_iters_per_level, settings.step_norm_tol, true,
                                         &res.residual_history);
  res.pose = lvl.pose;
  res.iterations_used.push_back(lvl.iterations);
  const WarpedFrame f = warp_source(sys, src, res.pose);
  detail::check_overlap(f, "dvo");
  res.final_residual = f.mean_squared_residual();
  res.valid_fraction = f.valid_fraction();
  res.residual_history.push_back(res.final_residual);
  return res;
}

/// Coarse-to-fine over settings.levels pyramid levels; each level is warm
/// started with the pose of the next coarser one.
inline DvoResult solve_coarse_to_fine(const ImageBuffer& ref_img, const InverseDepthMap& ref_depth,
                                      const ImageBuffer& src_img, const CameraIntrinsics& camera, const Pose6D& init,
                                      const DvoSettings& settings) {
  settings.validate();
  if (settings.levels == 1) return solve_level(ref_img, ref_depth, src_img, camera, init, settings);
  if (!ref_img.same_grid(src_img) || !ref_img.same_grid(ref_depth)) {
    throw ShapeMismatch("reference, depth and source grids differ");
  }
  detail::require_levels(ref_img, settings.levels);
  const ImagePyramid ref_pyr = build_pyramid(to_grayscale(ref_img), settings.levels);
  const ImagePyramid src_pyr = build_pyramid(to_grayscale(src_img), settings.levels);
  const ImagePyramid depth_pyr = build_pyramid(ref_depth, settings.levels);
  DvoResult res;
  Pose6D pose = init;
  for (int level = settings.levels - 1; level >= 0; --level) {
    const ReferenceSystem sys = precompute_reference_system(ref_pyr[level], depth_pyr[level],
                                                            camera.at_level(level), settings.damping, false);
    const auto lvl = detail::iterate_level(sys, src_pyr[level], pose, settings.max_iters_per_level,
                                           settings.step_norm_tol, true, level == 0 ? &res.residual_history : nullptr);
    pose = lvl.pose;
    res.iterations_used.push_back(lvl.iterations);
    if (level == 0) {
      const WarpedFrame f = warp_source(sys, src_pyr[0], pose);
      detail::check_overlap(f, "dvo");
      res.final_residual = f.mean_squared_residual();
      res.valid_fraction = f.valid_fraction();
      res.residual_history.push_back(res.final_residual);
    }
  }
  res.pose = pose;
  return res;
}

}  // namespace ddvo
