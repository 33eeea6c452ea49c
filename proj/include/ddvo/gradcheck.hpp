#pragma once

// Finite-difference checks of every analytic gradient on small random
// instances. Bilinear sampling and the absolute values in the losses are only
// piecewise smooth, so a coordinate whose central difference straddles a kink
// is excluded; the kink shows up as a second difference comparable to the
// first.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ddvo/ddvo.hpp"
#include "ddvo/losses.hpp"
#include "ddvo/synth.hpp"

namespace ddvo {

struct GradcheckRow {
  enum class Status { Pass, Fail, Skipped };
  std::string component;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t compared = 0;  // coordinates compared
  std::size_t excluded = 0;  // coordinates straddling a kink
  Status status = Status::Pass;
  std::string note;
};

inline const char* to_string(GradcheckRow::Status s) {
  switch (s) {
    case GradcheckRow::Status::Pass:
      return "pass";
    case GradcheckRow::Status::Fail:
      return "FAIL";
    case GradcheckRow::Status::Skipped:
      return "skipped";
  }
  return "?";
}

struct GradcheckOptions {
  int instances = 50;
  int size = 16;
  int unroll_iters = 2;
  double step = 1e-5;
  double ddvo_tolerance = 1e-3;
  double loss_tolerance = 1e-4;
  bool grad_through_jacobian = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (instances < 1) throw ConfigError("gradcheck.instances must be >= 1");
    if (size < 16) throw ConfigError("gradcheck.size must be >= 16");
    if (unroll_iters < 1) throw ConfigError("gradcheck.unroll_iters must be >= 1");
    if (!(step > 0.0)) throw ConfigError("gradcheck.step must be > 0");
    if (!(ddvo_tolerance > 0.0) || !(loss_tolerance > 0.0)) throw ConfigError("gradcheck tolerances must be > 0");
  }
};

namespace detail {

// Entries smaller than this fraction of the largest entry of the same
// gradient are compared against that floor rather than their own size.
inline constexpr double kRelativeFloor = 1e-3;
// A pose step moves every pixel at once, so lattice crossings are far more
// likely than for a single depth value; the pose step is correspondingly smaller.
inline constexpr double kPoseStepFactor = 1e-2;

struct FdComparison {
  double max_rel = 0.0;
  std::size_t compared = 0;
  std::size_t excluded = 0;
};

// Compares `analytic` against central differences of f over `x`. Central
// differences with steps h and h/2 agree to O(h^2) where f is smooth and
// disagree when a kink lies inside either interval; coordinates where they
// differ by more than a tenth of the tolerance are excluded. The test looks
// only at f, never at the analytic gradient.
inline FdComparison compare_fd(std::vector<double> x, const std::vector<double>& analytic,
                               const std::function<double(const std::vector<double>&)>& f, double h,
                               double tolerance) {
  std::vector<double> fd(x.size(), 0.0);
  std::vector<double> fd_half(x.size(), 0.0);
  auto central = [&](std::size_t i, double step) {
    const double xi = x[i];
    x[i] = xi + step;
    const double fp = f(x);
    x[i] = xi - step;
    const double fm = f(x);
    x[i] = xi;
    return (fp - fm) / (2.0 * step);
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    fd[i] = central(i, h);
    fd_half[i] = central(i, 0.5 * h);
  }
  double fd_scale = 0.0;
  for (double v : fd) fd_scale = std::max(fd_scale, std::abs(v));
  std::vector<bool> smooth(x.size(), true);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double den = std::max({std::abs(fd[i]), kRelativeFloor * fd_scale, 1e-300});
    smooth[i] = std::abs(fd[i] - fd_half[i]) <= 0.1 * tolerance * den;
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (smooth[i]) scale = std::max({scale, std::abs(fd[i]), std::abs(analytic[i])});
  }
  FdComparison c;
  const double floor = std::max(kRelativeFloor * scale, 1e-300);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!smooth[i]) {
      ++c.excluded;
      continue;
    }
    ++c.compared;
    const double den = std::max({std::abs(fd[i]), std::abs(analytic[i]), floor});
    c.max_rel = std::max(c.max_rel, std::abs(analytic[i] - fd[i]) / den);
  }
  return c;
}

struct RandomInstance {
  ImageBuffer ref;
  ImageBuffer src;
  InverseDepthMap depth;  // gt depth with multiplicative noise, so residuals are not zero
  Pose6D pose;            // ground-truth motion
  CameraIntrinsics camera;
};

inline RandomInstance random_instance(std::mt19937_64& rng, int width, int height, int channels) {
  SceneSpec spec;
  spec.kind = SceneKind::SmoothHeightField;
  spec.seed = rng();
  spec.width = width;
  spec.height = height;
  spec.channels = channels;
  spec.camera = default_camera(width, height);
  spec.min_wavelength = 5.0;
  spec.max_wavelength = 2.0 * std::max(width, height);
  const Scene scene = make_scene(spec);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double z = 0.5 * (spec.z_min + spec.z_max);
  Pose6D p;
  p.t = z * 0.02 * Vec3(u(rng), u(rng), u(rng));
  p.omega = 0.005 * Vec3(u(rng), u(rng), u(rng));
  RandomInstance inst{scene.image, render_view(scene, p).image, scene.depth, p, spec.camera};
  for (double& d : inst.depth.storage()) d *= 1.0 + 0.1 * u(rng);
  return inst;
}

inline std::vector<double> random_seed_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (double& e : v) e = g(rng);
  return v;
}

inline InverseDepthMap with_values(const InverseDepthMap& like, const std::vector<double>& v) {
  return ImageBuffer(like.width(), like.height(), 1, v);
}

inline void fold(GradcheckRow& row, const FdComparison& c) {
  row.max_rel_error = std::max(row.max_rel_error, c.max_rel);
  row.compared += c.compared;
  row.excluded += c.excluded;
}

inline void finish(GradcheckRow& row) {
  if (row.status == GradcheckRow::Status::Skipped) return;
  row.status = row.compared > 0 && row.max_rel_error < row.tolerance ? GradcheckRow::Status::Pass
                                                                      : GradcheckRow::Status::Fail;
}

}  // namespace detail

/// Depth gradient of v . p_out through the unrolled solver. With
/// grad_through_jacobian off the full-chain row is skipped and only the
/// warp-side gradient (Jacobian held at the unperturbed depth) is checked.
inline std::vector<GradcheckRow> gradcheck_ddvo(const GradcheckOptions& opt) {
  opt.validate();
  std::mt19937_64 rng(opt.seed);
  GradcheckRow full{"ddvo depth (full chain)", 0.0, opt.ddvo_tolerance, 0, 0, GradcheckRow::Status::Pass, ""};
  GradcheckRow partial{"ddvo depth (warp only)", 0.0, opt.ddvo_tolerance, 0, 0, GradcheckRow::Status::Pass, ""};
  if (!opt.grad_through_jacobian) {
    full.status = GradcheckRow::Status::Skipped;
    full.note = "ddvo.grad_through_jacobian = false";
  }
  DdvoSettings s;
  s.levels = 1;
  s.unroll_iters = opt.unroll_iters;
  for (int n = 0; n < opt.instances; ++n) {
    const detail::RandomInstance inst = detail::random_instance(rng, opt.size, opt.size, 1);
    const std::vector<double> v = detail::random_seed_vector(rng, 6);
    auto project = [&v](const Pose6D& p) { return Eigen::Map<const Vec6>(v.data()).dot(p.vector()); };

    s.grad_through_jacobian = true;
    const DdvoForward fwd = ddvo_forward(inst.ref, inst.depth, inst.src, inst.camera, s);
    if (opt.grad_through_jacobian) {
      const DdvoGradients g = ddvo_backward(fwd.tape, v);
      detail::fold(full, detail::compare_fd(
                             inst.depth.storage(), g.depth.storage(),
                             [&](const std::vector<double>& d) {
                               return project(
                                   ddvo_forward(inst.ref, detail::with_values(inst.depth, d), inst.src, inst.camera, s)
                                       .pose);
                             },
                             opt.step, opt.ddvo_tolerance));
    }
    s.grad_through_jacobian = false;
    const DdvoForward fwd_w = ddvo_forward(inst.ref, inst.depth, inst.src, inst.camera, s);
    const DdvoGradients gw = ddvo_backward(fwd_w.tape, v);
    detail::fold(partial, detail::compare_fd(
                              inst.depth.storage(), gw.depth.storage(),
                              [&](const std::vector<double>& d) {
                                return project(ddvo_forward_detached_jacobian(
                                    inst.ref, inst.depth, detail::with_values(inst.depth, d), inst.src, inst.camera, s));
                              },
                              opt.step, opt.ddvo_tolerance));
  }
  detail::finish(full);
  detail::finish(partial);
  return {full, partial};
}

/// Appearance (depth and pose), smoothness, normalization and the complete
/// triplet objective.
inline std::vector<GradcheckRow> gradcheck_losses(const GradcheckOptions& opt, const LossWeights& weights = {}) {
  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  GradcheckRow app_d{"appearance depth", 0.0, opt.loss_tolerance, 0, 0, GradcheckRow::Status::Pass, ""};
  GradcheckRow app_p{"appearance pose", 0.0, opt.loss_tolerance, 0, 0, GradcheckRow::Status::Pass, ""};
  GradcheckRow smooth{"smoothness depth", 0.0, opt.loss_tolerance, 0, 0, GradcheckRow::Status::Pass, ""};
  GradcheckRow norm{"normalization chain", 0.0, opt.loss_tolerance, 0, 0, GradcheckRow::Status::Pass, ""};
  GradcheckRow trip{"triplet loss depth", 0.0, opt.loss_tolerance, 0, 0, GradcheckRow::Status::Pass, ""};
  const int instances = std::max(1, opt.instances / 10);

  for (int n = 0; n < instances; ++n) {
    const detail::RandomInstance inst = detail::random_instance(rng, opt.size, opt.size, 3);
    for (int scale : {0, 1}) {
      const AppearanceResult a = appearance_loss(inst.ref, inst.src, inst.depth, inst.pose, inst.camera, scale, weights);
      detail::fold(app_d, detail::compare_fd(
                              inst.depth.storage(), a.grad_depth.storage(),
                              [&](const std::vector<double>& d) {
                                return appearance_loss(inst.ref, inst.src, detail::with_values(inst.depth, d),
                                                       inst.pose, inst.camera, scale, weights, false)
                                    .loss;
                              },
                              opt.step, opt.loss_tolerance));
      const Vec6 p0 = inst.pose.vector();
      detail::fold(app_p, detail::compare_fd(
                              std::vector<double>(p0.data(), p0.data() + 6),
                              std::vector<double>(a.grad_pose.data(), a.grad_pose.data() + 6),
                              [&](const std::vector<double>& pv) {
                                return appearance_loss(inst.ref, inst.src, inst.depth,
                                                       Pose6D::from_vector(Eigen::Map<const Vec6>(pv.data())),
                                                       inst.camera, scale, weights, false)
                                    .loss;
                              },
                              detail::kPoseStepFactor * opt.step, opt.loss_tolerance));
    }

    const PriorResult pr = smoothness_prior(inst.depth, inst.ref);
    detail::fold(smooth, detail::compare_fd(
                             inst.depth.storage(), pr.grad_depth.storage(),
                             [&](const std::vector<double>& d) {
                               return smoothness_prior(detail::with_values(inst.depth, d), inst.ref, false).loss;
                             },
                             opt.step, opt.loss_tolerance));

    // v . eta(d) for a random v exercises the full Jacobian of eta.
    const std::vector<double> v = detail::random_seed_vector(rng, inst.depth.pixel_count());
    const ImageBuffer vimg = detail::with_values(inst.depth, v);
    const ImageBuffer gn = normalize_inverse_depth_vjp(inst.depth, vimg);
    detail::fold(norm, detail::compare_fd(
                           inst.depth.storage(), gn.storage(),
                           [&](const std::vector<double>& d) {
                             const InverseDepthMap e = normalize_inverse_depth(detail::with_values(inst.depth, d));
                             double s = 0.0;
                             for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * e.storage()[i];
                             return s;
                           },
                           opt.step, opt.loss_tolerance));
  }

  // Four loss scales need a grid of at least 32 pixels for the coarse prior.
  const SynthTriplet st = [&] {
    SceneSpec spec = bundled_triplet_spec();
    spec.seed = rng();
    spec.width = 32;
    spec.height = 32;
    spec.camera = default_camera(32, 32);
    spec.min_wavelength = 6.0;
    const auto [p21, p23] = detail::triplet_motion(spec, 1.0);
    return make_triplet(make_scene(spec), p21, p23);
  }();
  Triplet t = st.triplet;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& d : t.depths) {
    for (double& e : d.storage()) e *= 1.0 + 0.1 * u(rng);
  }
  const TripletLoss tl = triplet_loss(t, st.camera, weights, true);
  for (int k = 0; k < 3; ++k) {
    detail::fold(trip, detail::compare_fd(
                           t.depths[static_cast<std::size_t>(k)].storage(),
                           tl.grad_depth[static_cast<std::size_t>(k)].storage(),
                           [&](const std::vector<double>& d) {
                             Triplet tk = t;
                             tk.depths[static_cast<std::size_t>(k)] = detail::with_values(t.depths[0], d);
                             return triplet_loss(tk, st.camera, weights, false).breakdown.total;
                           },
                           opt.step, opt.loss_tolerance));
  }

  std::vector<GradcheckRow> rows{app_d, app_p, smooth, norm, trip};
  for (auto& r : rows) detail::finish(r);
  return rows;
}

inline std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& opt, const LossWeights& weights = {}) {
  std::vector<GradcheckRow> rows = gradcheck_ddvo(opt);
  const std::vector<GradcheckRow> loss_rows = gradcheck_losses(opt, weights);
  rows.insert(rows.end(), loss_rows.begin(), loss_rows.end());
  return rows;
}

}  // namespace ddvo
