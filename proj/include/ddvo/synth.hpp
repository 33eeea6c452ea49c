#pragma once

// Deterministic synthetic scenes. A scene is a surface seen from the
// reference camera, described by its inverse depth as a closed-form function
// of reference normalized coordinates, and painted with a band-limited
// sinusoidal texture that is also defined in reference coordinates. Other
// views are rendered by intersecting each pixel ray with the surface and
// evaluating the texture where the hit projects into the reference camera, so
// rendered frames carry no resampling error.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ddvo/errors.hpp"
#include "ddvo/geometry.hpp"
#include "ddvo/imaging.hpp"
#include "ddvo/losses.hpp"

namespace ddvo {

enum class SceneKind { TexturedPlane, TwoPlane, SmoothHeightField };

inline std::string to_string(SceneKind k) {
  switch (k) {
    case SceneKind::TexturedPlane:
      return "textured-plane";
    case SceneKind::TwoPlane:
      return "two-plane";
    case SceneKind::SmoothHeightField:
      return "smooth-height-field";
  }
  return "?";
}

inline SceneKind scene_kind_from_string(const std::string& s) {
  if (s == "textured-plane") return SceneKind::TexturedPlane;
  if (s == "two-plane") return SceneKind::TwoPlane;
  if (s == "smooth-height-field") return SceneKind::SmoothHeightField;
  throw ConfigError("unknown scene kind '" + s + "'");
}

inline CameraIntrinsics default_camera(int width, int height) {
  const double f = 0.9 * width;
  return {f, f, 0.5 * (width - 1), 0.5 * (height - 1)};
}

struct SceneSpec {
  SceneKind kind = SceneKind::SmoothHeightField;
  std::uint64_t seed = 1;
  int width = 160;
  int height = 128;
  int channels = 3;
  double z_min = 2.0;  // nearest scene depth
  double z_max = 4.0;  // farthest scene depth
  CameraIntrinsics camera = default_camera(160, 128);
  // Texture wavelengths in reference pixels.
  double min_wavelength = 6.0;
  double max_wavelength = 48.0;
  int texture_waves = 12;

  void validate() const {
    if (width < 16 || height < 16) throw ConfigError("scene grid must be at least 16x16");
    if (channels != 1 && channels != 3) throw ConfigError("scene channels must be 1 or 3");
    if (!(z_min > 0.0) || !(z_max >= z_min)) throw ConfigError("scene depth range must be positive, z_min <= z_max");
    if (!camera.valid()) throw ConfigError("scene camera intrinsics are invalid");
    if (!(min_wavelength >= 2.0) || !(max_wavelength >= min_wavelength)) {
      throw ConfigError("texture wavelengths must satisfy 2 <= min <= max");
    }
    if (texture_waves < 1) throw ConfigError("texture_waves must be >= 1");
  }
};

struct Wave {
  double kx = 0.0;  // radians per pixel
  double ky = 0.0;
  double phase = 0.0;
  std::array<double, 3> amplitude{};
};

struct Scene {
  SceneSpec spec;
  std::vector<Wave> texture;
  // Inverse-depth model.
  std::vector<Wave> relief;  // smooth-height-field, unit total amplitude
  double d_min = 0.0;
  double d_max = 0.0;
  double crease_u = 0.0;       // two-plane
  double crease_extent = 1.0;  // two-plane

  ImageBuffer image;        // reference view
  InverseDepthMap depth;    // reference inverse depth

  /// Texture at reference pixel coordinates (x, y); may lie outside the image.
  double texture_at(double x, double y, int c) const {
    double v = 0.5;
    for (const Wave& w : texture) v += w.amplitude[static_cast<std::size_t>(c)] * std::sin(w.kx * x + w.ky * y + w.phase);
    return v;
  }

  /// Surface inverse depth along reference normalized direction (u, v).
  double inverse_depth_at(double u, double v) const {
    switch (spec.kind) {
      case SceneKind::TexturedPlane:
        return d_min;
      case SceneKind::TwoPlane:
        return d_max - (d_max - d_min) * std::abs(u - crease_u) / crease_extent;
      case SceneKind::SmoothHeightField: {
        const Vec2 px = spec.camera.to_pixel({u, v});
        double s = 0.0;
        for (const Wave& w : relief) s += w.amplitude[0] * std::sin(w.kx * px.x() + w.ky * px.y() + w.phase);
        return 0.5 * (d_min + d_max) + 0.5 * (d_max - d_min) * s;
      }
    }
    return d_min;
  }
};

namespace detail {

inline Wave random_wave(std::mt19937_64& rng, double min_wl, double max_wl) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double wl = min_wl * std::pow(max_wl / min_wl, unit(rng));
  const double angle = 2.0 * std::numbers::pi * unit(rng);
  Wave w;
  w.kx = 2.0 * std::numbers::pi / wl * std::cos(angle);
  w.ky = 2.0 * std::numbers::pi / wl * std::sin(angle);
  w.phase = 2.0 * std::numbers::pi * unit(rng);
  for (double& a : w.amplitude) a = 0.5 + 0.5 * unit(rng);
  return w;
}

}  // namespace detail

/// Builds the reference image and its ground-truth inverse depth.
inline Scene make_scene(const SceneSpec& spec) {
  spec.validate();
  Scene s;
  s.spec = spec;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Each channel gets its own waves so that the color image has no common
  // gradient-free directions. Amplitudes sum to 0.45 per channel, which keeps
  // values in [0.05, 0.95].
  for (int c = 0; c < spec.channels; ++c) {
    double total = 0.0;
    const std::size_t first = s.texture.size();
    for (int i = 0; i < spec.texture_waves; ++i) {
      Wave w = detail::random_wave(rng, spec.min_wavelength, spec.max_wavelength);
      const double a = w.amplitude[0];
      w.amplitude = {0.0, 0.0, 0.0};
      w.amplitude[static_cast<std::size_t>(c)] = a;
      total += a;
      s.texture.push_back(w);
    }
    for (std::size_t i = first; i < s.texture.size(); ++i) s.texture[i].amplitude[static_cast<std::size_t>(c)] *= 0.45 / total;
  }

  s.d_min = 1.0 / spec.z_max;
  s.d_max = 1.0 / spec.z_min;
  if (spec.kind == SceneKind::TexturedPlane) s.d_min = s.d_max = 2.0 / (spec.z_min + spec.z_max);
  if (spec.kind == SceneKind::TwoPlane) {
    const NormalizedPoint lo = spec.camera.normalize(0.0, 0.0);
    const NormalizedPoint hi = spec.camera.normalize(spec.width - 1.0, 0.0);
    s.crease_u = lo.u + (hi.u - lo.u) * (1.0 / 3.0 + unit(rng) / 3.0);
    s.crease_extent = std::max(s.crease_u - lo.u, hi.u - s.crease_u);
  }
  if (spec.kind == SceneKind::SmoothHeightField) {
    const double span = std::max(spec.width, spec.height);
    double total = 0.0;
    for (int i = 0; i < 3; ++i) {
      Wave w = detail::random_wave(rng, 0.75 * span, 2.0 * span);
      total += w.amplitude[0];
      s.relief.push_back(w);
    }
    for (Wave& w : s.relief) w.amplitude[0] /= total;
  }

  s.image = ImageBuffer(spec.width, spec.height, spec.channels);
  s.depth = InverseDepthMap(spec.width, spec.height, 1);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      for (int c = 0; c < spec.channels; ++c) s.image.at(x, y, c) = s.texture_at(x, y, c);
      const NormalizedPoint n = spec.camera.normalize(x, y);
      s.depth.at(x, y) = s.inverse_depth_at(n.u, n.v);
    }
  }
  return s;
}

struct RenderedView {
  ImageBuffer image;
  ValidityMask mask;          // hit lies inside the reference image, in front of both cameras
  InverseDepthMap depth;      // inverse depth in the rendered camera (0 where no hit)
};

namespace detail {

struct RayHit {
  bool found = false;
  double lambda = 0.0;  // depth along the rendered camera's z axis
  Vec3 ref_point = Vec3::Zero();
};

// First crossing of the surface along X_ref(l) = R^T (l x~ - t).
inline RayHit intersect(const Scene& s, const Vec3& rt_t, const Vec3& dir) {
  auto g = [&](double l, Vec3* pt) {
    const Vec3 x = l * dir - rt_t;
    if (pt) *pt = x;
    if (!(x.z() > kEpsilonZ)) return -1.0;
    return s.inverse_depth_at(x.x() / x.z(), x.y() / x.z()) * x.z() - 1.0;
  };
  const double lo_bound = 0.2 * s.spec.z_min;
  const double hi_bound = 5.0 * s.spec.z_max;
  constexpr int kScan = 256;
  const double ratio = std::pow(hi_bound / lo_bound, 1.0 / kScan);
  double a = lo_bound;
  double ga = g(a, nullptr);
  RayHit hit;
  for (int i = 1; i <= kScan; ++i) {
    const double next = lo_bound * std::pow(ratio, i);
    const double gb = g(next, nullptr);
    if (ga < 0.0 && gb >= 0.0) {
      double b = next;
      // Illinois regula falsi on [a, b].
      double fa = ga;
      double fb = gb;
      int side = 0;
      for (int it = 0; it < 200 && (b - a) > 1e-15 * b; ++it) {
        const double c = (a * fb - b * fa) / (fb - fa);
        const double fc = g(c, nullptr);
        if (fc == 0.0) {
          a = b = c;
          break;
        }
        if ((fc < 0.0) == (fa < 0.0)) {
          a = c;
          fa = fc;
          if (side == -1) fb *= 0.5;
          side = -1;
        } else {
          b = c;
          fb = fc;
          if (side == 1) fa *= 0.5;
          side = 1;
        }
      }
      hit.found = true;
      hit.lambda = std::abs(fa) < std::abs(fb) ? a : b;
      g(hit.lambda, &hit.ref_point);
      return hit;
    }
    a = next;
    ga = gb;
  }
  return hit;
}

}  // namespace detail

/// Renders the view whose camera satisfies X_view = R(p) X_ref + t(p).
/// Pixels whose surface hit projects outside the reference image are masked
/// but still carry the (analytic) texture value.
inline RenderedView render_view(const Scene& scene, const Pose6D& p) {
  const SceneSpec& spec = scene.spec;
  const CameraIntrinsics& k = spec.camera;
  const Mat3 rt = p.rotation().transpose();
  const Vec3 rt_t = rt * p.t;
  RenderedView out;
  out.image = ImageBuffer(spec.width, spec.height, spec.channels, 0.5);
  out.mask = ValidityMask(spec.width, spec.height);
  out.depth = InverseDepthMap(spec.width, spec.height, 1);
  constexpr double kSlack = 1e-9;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Vec3 dir = rt * homogeneous(k.normalize(x, y));
      const detail::RayHit hit = detail::intersect(scene, rt_t, dir);
      if (!hit.found) continue;
      const Vec3& q = hit.ref_point;
      const Vec2 ref_px = k.to_pixel({q.x() / q.z(), q.y() / q.z()});
      for (int c = 0; c < spec.channels; ++c) out.image.at(x, y, c) = scene.texture_at(ref_px.x(), ref_px.y(), c);
      out.depth.at(x, y) = 1.0 / hit.lambda;
      const bool inside = ref_px.x() >= -kSlack && ref_px.y() >= -kSlack && ref_px.x() <= spec.width - 1 + kSlack &&
                          ref_px.y() <= spec.height - 1 + kSlack;
      out.mask.valid[static_cast<std::size_t>(y) * spec.width + x] = inside ? 1 : 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bundled fixtures

struct SynthTriplet {
  Triplet triplet;  // images, ground-truth inverse depths and poses
  CameraIntrinsics camera;
};

/// I2 is the scene's reference view; I1 and I3 are rendered at p21 and p23.
inline SynthTriplet make_triplet(const Scene& scene, const Pose6D& p21, const Pose6D& p23) {
  SynthTriplet s;
  s.camera = scene.spec.camera;
  const RenderedView v1 = render_view(scene, p21);
  const RenderedView v3 = render_view(scene, p23);
  s.triplet.images = {v1.image, scene.image, v3.image};
  s.triplet.depths = {v1.depth, scene.depth, v3.depth};
  s.triplet.p21 = p21;
  s.triplet.p23 = p23;
  return s;
}

inline SceneSpec bundled_triplet_spec() {
  SceneSpec spec;
  spec.kind = SceneKind::SmoothHeightField;
  spec.seed = 7;
  spec.width = 64;
  spec.height = 48;
  spec.camera = default_camera(spec.width, spec.height);
  spec.z_min = 1.5;
  spec.z_max = 6.0;
  spec.min_wavelength = 12.0;
  spec.max_wavelength = 48.0;
  return spec;
}

namespace detail {

// Motions along two different directions, so that no pixel of the middle
// frame is blind to both.
inline std::pair<Pose6D, Pose6D> triplet_motion(const SceneSpec& spec, double scale) {
  const double z = 0.5 * (spec.z_min + spec.z_max);
  Pose6D p21;
  p21.t = scale * z * Vec3(0.02, -0.003, 0.007);
  p21.omega = scale * Vec3(0.002, -0.004, 0.001);
  Pose6D p23;
  p23.t = scale * z * Vec3(0.004, 0.02, -0.007);
  p23.omega = scale * Vec3(-0.002, 0.004, -0.001);
  return {p21, p23};
}

}  // namespace detail

/// Small-motion triplet used by the training demos.
inline SynthTriplet bundled_triplet() {
  const SceneSpec spec = bundled_triplet_spec();
  const auto [p21, p23] = detail::triplet_motion(spec, 1.0);
  return make_triplet(make_scene(spec), p21, p23);
}

/// Triplet with motion large enough that single-level alignment from the
/// identity is unreliable.
inline SynthTriplet bundled_large_motion_clip() {
  SceneSpec spec = bundled_triplet_spec();
  spec.seed = 11;
  const auto [p21, p23] = detail::triplet_motion(spec, 3.0);
  return make_triplet(make_scene(spec), p21, p23);
}

struct SynthPair {
  ImageBuffer reference;
  InverseDepthMap depth;
  ImageBuffer source;
  Pose6D pose;  // reference to source
  CameraIntrinsics camera;
};

inline SynthPair make_pair(const Scene& scene, const Pose6D& p) {
  return {scene.image, scene.depth, render_view(scene, p).image, p, scene.spec.camera};
}

/// Pair with a lateral translation of 5% of the mean scene depth. The long
/// focal length and fine texture make this about 11 pixels of parallax over
/// wavelengths down to 6 pixels, beyond the basin of a single-level solve.
inline SynthPair bundled_large_translation_pair() {
  SceneSpec spec;
  spec.kind = SceneKind::SmoothHeightField;
  spec.seed = 2;
  spec.width = 160;
  spec.height = 128;
  spec.camera = default_camera(spec.width, spec.height);
  spec.camera.fx = spec.camera.fy = 1.5 * spec.width;
  spec.min_wavelength = 6.0;
  spec.max_wavelength = 64.0;
  const Scene scene = make_scene(spec);
  Pose6D p;
  p.t = Vec3(0.05 * 0.5 * (spec.z_min + spec.z_max), 0.0, 0.0);
  return make_pair(scene, p);
}

}  // namespace ddvo
