#pragma once

// Training objective over inverse depth: mean normalization, photometric
// appearance terms (L1, plus SSIM on the finest scale), edge-aware
// second-order smoothness and the multi-scale triplet aggregate. Every term
// comes with analytic gradients.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ddvo/errors.hpp"
#include "ddvo/geometry.hpp"
#include "ddvo/imaging.hpp"

namespace ddvo {

inline constexpr int kLossScales = 4;
inline constexpr double kMinMeanDepth = 1e-12;

struct LossWeights {
  double lambda_prior = 0.01;
  double ssim_weight = 0.85;
  double ssim_c1 = 0.01 * 0.01;
  double ssim_c2 = 0.03 * 0.03;

  void validate() const {
    if (!(lambda_prior >= 0.0)) throw ConfigError("loss.lambda_prior must be >= 0");
    if (!(ssim_weight >= 0.0 && ssim_weight <= 1.0)) throw ConfigError("loss.ssim_weight must be in [0, 1]");
    if (!(ssim_c1 > 0.0) || !(ssim_c2 > 0.0)) throw ConfigError("loss.ssim_c1 and loss.ssim_c2 must be > 0");
  }
};

struct LossBreakdown {
  std::array<double, kLossScales> appearance_per_scale{};
  std::array<double, 2> prior_per_scale{};  // scales 2 and 3
  double total = 0.0;
  double forward = 0.0;   // comparisons against I2
  double backward = 0.0;  // I2 compared against I1 and I3

  double appearance() const {
    double s = 0.0;
    for (double v : appearance_per_scale) s += v;
    return s;
  }
  double prior() const { return prior_per_scale[0] + prior_per_scale[1]; }
};

// p21 maps camera-2 coordinates to camera 1, p23 camera 2 to camera 3.
struct Triplet {
  std::array<ImageBuffer, 3> images;
  std::array<InverseDepthMap, 3> depths;
  Pose6D p21;
  Pose6D p23;

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      if (!images[i].same_grid(images[0]) || !depths[i].same_grid(images[0]) ||
          images[i].channels() != images[0].channels() || depths[i].channels() != 1) {
        throw ShapeMismatch("triplet images and depths must share one grid");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Normalization

/// eta(d_i) = N d_i / sum_j d_j.
inline InverseDepthMap normalize_inverse_depth(const InverseDepthMap& d) {
  double sum = 0.0;
  for (double v : d.data()) sum += v;
  const double n = static_cast<double>(d.storage().size());
  if (d.empty() || !(sum / n > kMinMeanDepth)) {
    throw DegenerateDepth("normalize_inverse_depth: mean inverse depth " + std::to_string(sum / n) +
                          " has collapsed");
  }
  const double k = n / sum;
  InverseDepthMap out = d;
  for (double& v : out.storage()) v *= k;
  return out;
}

/// Pulls a gradient on eta(d) back to d.
inline ImageBuffer normalize_inverse_depth_vjp(const InverseDepthMap& d, const ImageBuffer& grad_out) {
  if (!d.same_grid(grad_out) || d.channels() != grad_out.channels()) {
    throw ShapeMismatch("normalize_inverse_depth_vjp: gradient grid differs");
  }
  double sum = 0.0;
  for (double v : d.data()) sum += v;
  const double n = static_cast<double>(d.storage().size());
  if (!(sum / n > kMinMeanDepth)) throw DegenerateDepth("normalize_inverse_depth_vjp: collapsed depth");
  const double k = n / sum;
  double gy = 0.0;  // sum_i g_i eta_i
  for (std::size_t i = 0; i < d.storage().size(); ++i) gy += grad_out.storage()[i] * d.storage()[i] * k;
  ImageBuffer out(d.width(), d.height(), d.channels());
  for (std::size_t i = 0; i < d.storage().size(); ++i) {
    out.storage()[i] = k * (grad_out.storage()[i] - gy / n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SSIM

namespace detail {

struct SsimWindow {
  double value = 0.0;
  std::array<double, 9> db{};  // d value / d b_j over the window, row-major
};

// SSIM of two 3x3 windows with population statistics.
inline SsimWindow ssim_window(const std::array<double, 9>& a, const std::array<double, 9>& b, double c1, double c2,
                              bool with_grad) {
  double ma = 0.0, mb = 0.0;
  for (int j = 0; j < 9; ++j) {
    ma += a[j];
    mb += b[j];
  }
  ma /= 9.0;
  mb /= 9.0;
  double vaa = 0.0, vbb = 0.0, vab = 0.0;
  for (int j = 0; j < 9; ++j) {
    vaa += (a[j] - ma) * (a[j] - ma);
    vbb += (b[j] - mb) * (b[j] - mb);
    vab += (a[j] - ma) * (b[j] - mb);
  }
  vaa /= 9.0;
  vbb /= 9.0;
  vab /= 9.0;
  const double a1 = 2.0 * ma * mb + c1;
  const double a2 = 2.0 * vab + c2;
  const double b1 = ma * ma + mb * mb + c1;
  const double b2 = vaa + vbb + c2;
  SsimWindow w;
  w.value = (a1 * a2) / (b1 * b2);
  if (with_grad) {
    const double k = (2.0 / 9.0) / (b1 * b2);
    for (int j = 0; j < 9; ++j) {
      w.db[j] = k * (ma * a2 + a1 * (a[j] - ma) - w.value * (mb * b2 + b1 * (b[j] - mb)));
    }
  }
  return w;
}

inline std::array<double, 9> window_at(const ImageBuffer& img, int x, int y, int c) {
  std::array<double, 9> w;
  int j = 0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) w[j++] = img.at(x + dx, y + dy, c);
  }
  return w;
}

}  // namespace detail

/// Per-pixel SSIM of two single-channel images over 3x3 box windows. The map
/// covers the (W-2) x (H-2) interior where the window fits.
inline ImageBuffer ssim(const ImageBuffer& a, const ImageBuffer& b, const LossWeights& weights = {}) {
  if (!a.same_grid(b) || a.channels() != 1 || b.channels() != 1) {
    throw ShapeMismatch("ssim: inputs must be single-channel on the same grid");
  }
  require_min_size(a, 3, 3, "ssim");
  ImageBuffer out(a.width() - 2, a.height() - 2, 1);
  for (int y = 1; y + 1 < a.height(); ++y) {
    for (int x = 1; x + 1 < a.width(); ++x) {
      out.at(x - 1, y - 1) = detail::ssim_window(detail::window_at(a, x, y, 0), detail::window_at(b, x, y, 0),
                                                 weights.ssim_c1, weights.ssim_c2, false)
                                 .value;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Appearance

struct AppearanceResult {
  double loss = 0.0;
  InverseDepthMap grad_depth;
  Vec6 grad_pose = Vec6::Zero();
  std::size_t pixels_used = 0;
};

namespace detail {

// Source image resampled at W(x_i; p, d_i) for every reference pixel.
struct WarpedImage {
  ImageBuffer values;  // reference grid, source channels
  ValidityMask mask;
  std::vector<Vec3> points;                 // P_i = R x~_i + d_i t
  std::vector<Eigen::MatrixX2d> pixel_grad;  // d value / d pixel, per channel
};

inline WarpedImage warp_image(const ImageBuffer& src, const InverseDepthMap& depth, const Pose6D& p,
                              const CameraIntrinsics& k, bool with_grad) {
  const int w = depth.width();
  const int h = depth.height();
  const std::size_t n = depth.pixel_count();
  WarpedImage out;
  out.values = ImageBuffer(w, h, src.channels());
  out.mask = ValidityMask(w, h);
  out.points.assign(n, Vec3::Zero());
  if (with_grad) out.pixel_grad.assign(n, Eigen::MatrixX2d());
  const Rotation3 r = p.rotation();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const Vec3 pt = warp_point_3d(k.normalize(x, y), r, p.t, depth.at(x, y));
      out.points[i] = pt;
      const auto proj = project(pt);
      if (!proj) continue;
      const Vec2 px = k.to_pixel(*proj);
      const BilinearCell cell = locate(src, px.x(), px.y());
      if (!cell.in_view) continue;
      out.mask.valid[i] = 1;
      for (int c = 0; c < src.channels(); ++c) out.values.at(x, y, c) = sample_channel(src, cell, c);
      if (with_grad) {
        Eigen::MatrixX2d g(src.channels(), 2);
        for (int c = 0; c < src.channels(); ++c) g.row(c) = sample_grad_channel(src, cell, c).transpose();
        out.pixel_grad[i] = std::move(g);
      }
    }
  }
  return out;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Photometric dissimilarity between `ref` and `src` warped onto the reference
/// grid by pose p and the reference inverse depth. All inputs live at one
/// pyramid scale and `k` is the camera for that scale. scale_index 0 uses
/// alpha (1 - SSIM) / 2 + (1 - alpha) |e| over pixels whose 3x3 window is in
/// view; coarser scales use |e| over in-view pixels. Channels are averaged.
inline AppearanceResult appearance_loss(const ImageBuffer& ref, const ImageBuffer& src, const InverseDepthMap& d_ref,
                                        const Pose6D& p, const CameraIntrinsics& k, int scale_index,
                                        const LossWeights& weights = {}, bool with_grad = true) {
  if (!ref.same_grid(src) || !ref.same_grid(d_ref) || ref.channels() != src.channels() || d_ref.channels() != 1) {
    throw ShapeMismatch("appearance_loss: reference, source and depth grids differ");
  }
  if (scale_index < 0 || scale_index >= kLossScales) throw ConfigError("appearance_loss: scale index out of range");
  const int w = ref.width();
  const int h = ref.height();
  const int ch = ref.channels();
  const bool finest = scale_index == 0;
  if (finest) require_min_size(ref, 3, 3, "appearance_loss");
  const detail::WarpedImage warped = detail::warp_image(src, d_ref, p, k, with_grad);
  if (warped.mask.fraction() < 0.25) {
    throw DegenerateOverlap("appearance_loss: only " + std::to_string(100.0 * warped.mask.fraction()) +
                            "% of pixels are in view");
  }

  // Pixels contributing to the mean.
  ValidityMask used(w, h);
  if (finest) {
    for (int y = 1; y + 1 < h; ++y) {
      for (int x = 1; x + 1 < w; ++x) {
        bool all = true;
        for (int dy = -1; dy <= 1 && all; ++dy) {
          for (int dx = -1; dx <= 1 && all; ++dx) {
            all = warped.mask.valid[static_cast<std::size_t>(y + dy) * w + x + dx] != 0;
          }
        }
        used.valid[static_cast<std::size_t>(y) * w + x] = all ? 1 : 0;
      }
    }
  } else {
    used = warped.mask;
  }
  const std::size_t count = used.count();
  AppearanceResult res;
  res.pixels_used = count;
  res.grad_depth = InverseDepthMap(w, h, 1);
  if (count == 0) throw DegenerateOverlap("appearance_loss: no pixel has a complete window in view");
  const double norm = 1.0 / (static_cast<double>(count) * ch);
  const double l1_weight = finest ? 1.0 - weights.ssim_weight : 1.0;
  const double ssim_weight = finest ? weights.ssim_weight : 0.0;

  // d loss / d warped value
  ImageBuffer gw(w, h, ch);
  double loss = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!used.valid[static_cast<std::size_t>(y) * w + x]) continue;
      for (int c = 0; c < ch; ++c) {
        const double e = ref.at(x, y, c) - warped.values.at(x, y, c);
        loss += l1_weight * std::abs(e);
        if (with_grad) gw.at(x, y, c) -= l1_weight * norm * detail::sign(e);
        if (ssim_weight > 0.0) {
          const auto s = detail::ssim_window(detail::window_at(ref, x, y, c), detail::window_at(warped.values, x, y, c),
                                             weights.ssim_c1, weights.ssim_c2, with_grad);
          loss += ssim_weight * 0.5 * (1.0 - s.value);
          if (with_grad) {
            int j = 0;
            for (int dy = -1; dy <= 1; ++dy) {
              for (int dx = -1; dx <= 1; ++dx) gw.at(x + dx, y + dy, c) -= ssim_weight * 0.5 * norm * s.db[j++];
            }
          }
        }
      }
    }
  }
  res.loss = loss * norm;
  if (!with_grad) return res;

  // Chain through bilinear sampling, projection and the rigid warp.
  const auto d_rot = rotation_derivatives(p.omega);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (!warped.mask.valid[i]) continue;
      Eigen::Vector2d g_pix = Eigen::Vector2d::Zero();
      for (int c = 0; c < ch; ++c) g_pix += gw.at(x, y, c) * warped.pixel_grad[i].row(c).transpose();
      if (g_pix.isZero(0.0)) continue;
      const Vec3& pt = warped.points[i];
      const double iz = 1.0 / pt.z();
      const double gu = g_pix.x() * k.fx * iz;
      const double gv = g_pix.y() * k.fy * iz;
      const Vec3 g_pt(gu, gv, -(gu * pt.x() + gv * pt.y()) * iz);
      const double di = d_ref.at(x, y);
      res.grad_depth.storage()[i] = g_pt.dot(p.t);
      res.grad_pose.head<3>() += di * g_pt;
      const Vec3 xh = homogeneous(k.normalize(x, y));
      for (int a = 0; a < 3; ++a) res.grad_pose(3 + a) += g_pt.dot(d_rot[a] * xh);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Smoothness

struct PriorResult {
  double loss = 0.0;
  InverseDepthMap grad_depth;
};

/// Mean over interior pixels of exp(-|lap I|) (|d_xx| + |d_xy| + |d_yy|).
inline PriorResult smoothness_prior(const InverseDepthMap& d, const ImageBuffer& img, bool with_grad = true) {
  if (!d.same_grid(img) || d.channels() != 1) throw ShapeMismatch("smoothness_prior: depth and image grids differ");
  require_min_size(d, 3, 3, "smoothness_prior");
  const ImageBuffer lap = laplacian(img);
  const int w = d.width();
  const int h = d.height();
  const double norm = 1.0 / (static_cast<double>(w - 2) * (h - 2));
  PriorResult res;
  res.grad_depth = InverseDepthMap(w, h, 1);
  double sum = 0.0;
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      const double wt = std::exp(-lap.at(x, y));
      const double dxx = d.at(x - 1, y) - 2.0 * d.at(x, y) + d.at(x + 1, y);
      const double dyy = d.at(x, y - 1) - 2.0 * d.at(x, y) + d.at(x, y + 1);
      const double dxy = 0.25 * (d.at(x + 1, y + 1) - d.at(x + 1, y - 1) - d.at(x - 1, y + 1) + d.at(x - 1, y - 1));
      sum += wt * (std::abs(dxx) + std::abs(dxy) + std::abs(dyy));
      if (!with_grad) continue;
      auto& g = res.grad_depth;
      const double sxx = wt * norm * detail::sign(dxx);
      const double syy = wt * norm * detail::sign(dyy);
      const double sxy = 0.25 * wt * norm * detail::sign(dxy);
      g.at(x - 1, y) += sxx;
      g.at(x + 1, y) += sxx;
      g.at(x, y) -= 2.0 * (sxx + syy);
      g.at(x, y - 1) += syy;
      g.at(x, y + 1) += syy;
      g.at(x + 1, y + 1) += sxy;
      g.at(x + 1, y - 1) -= sxy;
      g.at(x - 1, y + 1) -= sxy;
      g.at(x - 1, y - 1) += sxy;
    }
  }
  res.loss = sum * norm;
  return res;
}

// ---------------------------------------------------------------------------
// Triplet aggregate

struct TripletLoss {
  LossBreakdown breakdown;
  std::array<InverseDepthMap, 3> grad_depth;  // empty unless gradients were requested
  Vec6 grad_p21 = Vec6::Zero();
  Vec6 grad_p23 = Vec6::Zero();
};

/// Four directed comparisons per scale (I1->I2 and I3->I2 with D2, I2->I1 and
/// I2->I3 with D1, D3 and the inverse poses) over four scales, plus the
/// smoothness of each depth on the two coarsest scales weighted by lambda.
/// Per-scale depth is the area-average downsampling of the given depth.
inline TripletLoss triplet_loss(const Triplet& t, const CameraIntrinsics& k, const LossWeights& weights = {},
                                bool with_grad = true) {
  t.validate();
  weights.validate();
  std::array<ImagePyramid, 3> imgs;
  std::array<ImagePyramid, 3> deps;
  for (int i = 0; i < 3; ++i) {
    imgs[i] = build_pyramid(t.images[i], kLossScales);
    deps[i] = build_pyramid(t.depths[i], kLossScales);
  }
  const Pose6D p12 = invert(t.p21);
  const Pose6D p32 = invert(t.p23);

  TripletLoss out;
  std::array<std::vector<ImageBuffer>, 3> level_grad;  // per depth, per scale
  if (with_grad) {
    for (int i = 0; i < 3; ++i) {
      for (int s = 0; s < kLossScales; ++s) level_grad[i].emplace_back(deps[i][s].width(), deps[i][s].height(), 1);
    }
  }
  Vec6 g12 = Vec6::Zero();
  Vec6 g32 = Vec6::Zero();

  auto add = [](ImageBuffer& dst, const ImageBuffer& src, double scale) {
    for (std::size_t i = 0; i < dst.storage().size(); ++i) dst.storage()[i] += scale * src.storage()[i];
  };

  struct Direction {
    int ref;
    int src;
    const Pose6D* pose;
    Vec6* grad;
    bool forward;
  };
  const std::array<Direction, 4> dirs{{{1, 0, &t.p21, &out.grad_p21, true},
                                       {1, 2, &t.p23, &out.grad_p23, true},
                                       {0, 1, &p12, &g12, false},
                                       {2, 1, &p32, &g32, false}}};
  for (int s = 0; s < kLossScales; ++s) {
    const CameraIntrinsics ks = k.at_level(s);
    for (const auto& dir : dirs) {
      const AppearanceResult a = appearance_loss(imgs[dir.ref][s], imgs[dir.src][s], deps[dir.ref][s], *dir.pose, ks,
                                                 s, weights, with_grad);
      out.breakdown.appearance_per_scale[s] += a.loss;
      (dir.forward ? out.breakdown.forward : out.breakdown.backward) += a.loss;
      if (with_grad) {
        add(level_grad[dir.ref][s], a.grad_depth, 1.0);
        *dir.grad += a.grad_pose;
      }
    }
  }
  for (int s = 2; s < kLossScales; ++s) {
    for (int i = 0; i < 3; ++i) {
      const PriorResult pr = smoothness_prior(deps[i][s], imgs[i][s], with_grad);
      out.breakdown.prior_per_scale[s - 2] += pr.loss;
      if (with_grad) add(level_grad[i][s], pr.grad_depth, weights.lambda_prior);
    }
  }
  out.breakdown.total = out.breakdown.appearance() + weights.lambda_prior * out.breakdown.prior();
  if (!with_grad) return out;

  for (int i = 0; i < 3; ++i) {
    for (int s = kLossScales - 1; s > 0; --s) {
      const ImageBuffer& fine = level_grad[i][s - 1];
      add(level_grad[i][s - 1], downsample2_adjoint(level_grad[i][s], fine.width(), fine.height()), 1.0);
    }
    out.grad_depth[i] = std::move(level_grad[i][0]);
  }
  out.grad_p21 += invert_jacobian(t.p21.vector()).transpose() * g12;
  out.grad_p23 += invert_jacobian(t.p23.vector()).transpose() * g32;
  return out;
}

}  // namespace ddvo
