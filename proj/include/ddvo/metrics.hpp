#pragma once

// Depth accuracy with median scale alignment, and absolute trajectory error
// over short snippets with similarity alignment.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "ddvo/errors.hpp"
#include "ddvo/geometry.hpp"
#include "ddvo/image_io.hpp"
#include "ddvo/imaging.hpp"

namespace ddvo {

struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t count = 0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw NoValidPixels("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// gt > 0 and finite, optional extra mask, optional cap on gt.
inline std::vector<std::size_t> valid_indices(const ImageBuffer& gt, const ValidityMask* mask,
                                              std::optional<double> cap) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < gt.storage().size(); ++i) {
    const double g = gt.storage()[i];
    if (!(g > 0.0) || !std::isfinite(g)) continue;
    if (mask && !mask->valid[i]) continue;
    if (cap && !(g < *cap)) continue;
    idx.push_back(i);
  }
  return idx;
}

inline void check_depth_pair(const ImageBuffer& pred, const ImageBuffer& gt, const ValidityMask* mask) {
  if (!pred.same_grid(gt) || pred.channels() != 1 || gt.channels() != 1) {
    throw ShapeMismatch("predicted and ground-truth depth grids differ");
  }
  if (mask && (mask->width != gt.width() || mask->height != gt.height())) {
    throw ShapeMismatch("validity mask grid differs from the depth grid");
  }
}

inline double median_scale(const ImageBuffer& pred, const ImageBuffer& gt, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw NoValidPixels("no valid ground-truth pixels");
  std::vector<double> p;
  std::vector<double> g;
  p.reserve(idx.size());
  g.reserve(idx.size());
  for (std::size_t i : idx) {
    p.push_back(pred.storage()[i]);
    g.push_back(gt.storage()[i]);
  }
  const double mp = median_of(std::move(p));
  const double mg = median_of(std::move(g));
  if (!(mp > 0.0)) throw DegenerateDepth("median of the predicted depth is not positive");
  return mg / mp;
}

}  // namespace detail

/// Scales pred by median(gt) / median(pred), medians over valid gt pixels.
/// Operates on depths, not inverse depths.
inline ImageBuffer median_align(const ImageBuffer& pred, const ImageBuffer& gt, const ValidityMask* mask = nullptr) {
  detail::check_depth_pair(pred, gt, mask);
  const double s = detail::median_scale(pred, gt, detail::valid_indices(gt, mask, std::nullopt));
  ImageBuffer out = pred;
  for (double& v : out.storage()) v *= s;
  return out;
}

/// Standard depth error measures over pixels with gt > 0 (and gt < cap when
/// given). delta_k counts max(p/g, g/p) < 1.25^k strictly.
inline DepthMetrics depth_metrics(const ImageBuffer& pred, const ImageBuffer& gt, const ValidityMask* mask = nullptr,
                                  bool align = true, std::optional<double> max_depth_cap = std::nullopt) {
  detail::check_depth_pair(pred, gt, mask);
  const auto idx = detail::valid_indices(gt, mask, max_depth_cap);
  if (idx.empty()) throw NoValidPixels("depth_metrics: no valid ground-truth pixels");
  const double s = align ? detail::median_scale(pred, gt, idx) : 1.0;
  DepthMetrics m;
  m.count = idx.size();
  double sq = 0.0;
  double sq_log = 0.0;
  std::size_t d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i : idx) {
    const double p = s * pred.storage()[i];
    const double g = gt.storage()[i];
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw DegenerateDepth("depth_metrics: predicted depth must be positive and finite at every valid pixel");
    }
    const double e = p - g;
    m.abs_rel += std::abs(e) / g;
    m.sq_rel += e * e / g;
    sq += e * e;
    const double el = std::log(p) - std::log(g);
    sq_log += el * el;
    const double ratio = std::max(p / g, g / p);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
  }
  const double n = static_cast<double>(idx.size());
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(sq / n);
  m.rmse_log = std::sqrt(sq_log / n);
  m.delta1 = static_cast<double>(d1) / n;
  m.delta2 = static_cast<double>(d2) / n;
  m.delta3 = static_cast<double>(d3) / n;
  return m;
}

/// Element-wise 1/d; zero and negative entries map to 0 (invalid).
inline ImageBuffer inverse_depth_to_depth(const InverseDepthMap& d) {
  ImageBuffer out = d;
  for (double& v : out.storage()) v = v > 0.0 ? 1.0 / v : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Trajectories

struct Trajectory {
  std::vector<Mat4> poses;  // world-from-camera
  std::vector<int> frames;

  std::size_t size() const { return poses.size(); }

  void push_back(const Mat4& m) {
    frames.push_back(static_cast<int>(poses.size()));
    poses.push_back(m);
  }
};

/// One pose per line: the 12 entries of the top 3x4 block, row-major.
inline Trajectory read_kitti_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ImageIoError(path, 0, "cannot open trajectory file");
  Trajectory t;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    ss.imbue(std::locale::classic());
    Mat4 m = Mat4::Identity();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        if (!(ss >> m(r, c))) throw ImageIoError(path, line_start, "expected 12 numbers per pose line");
      }
    }
    std::string extra;
    if (ss >> extra) throw ImageIoError(path, line_start, "more than 12 numbers on a pose line");
    t.push_back(m);
  }
  return t;
}

/// Shortest round-trip decimal form, independent of the locale.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline std::string format_kitti_pose(const Mat4& m) {
  std::string line;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (!line.empty()) line += ' ';
      line += format_double(m(r, c));
    }
  }
  return line;
}

inline void write_kitti_trajectory(const std::string& path, const Trajectory& t) {
  std::string out;
  for (const Mat4& m : t.poses) out += format_kitti_pose(m) + "\n";
  io::detail::write_atomically(path, out);
}

struct AteResult {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation across windows
  std::vector<double> per_window;
};

/// Translational RMSE after least-squares similarity alignment of pred onto
/// gt (rotation, translation and scale).
inline double aligned_rmse(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  const Mat4 s = Eigen::umeyama(pred, gt, true);
  const Eigen::Matrix3Xd mapped = (s.topLeftCorner<3, 3>() * pred).colwise() + s.topRightCorner<3, 1>();
  return std::sqrt((mapped - gt).colwise().squaredNorm().mean());
}

/// ATE averaged over every window of `snippet_len` consecutive frames.
inline AteResult ate(const Trajectory& pred, const Trajectory& gt, int snippet_len = 5) {
  if (pred.size() != gt.size()) {
    throw LengthMismatch("ate: trajectories have " + std::to_string(pred.size()) + " and " +
                         std::to_string(gt.size()) + " poses");
  }
  if (snippet_len < 2 || pred.size() < static_cast<std::size_t>(snippet_len)) {
    throw LengthMismatch("ate: need at least " + std::to_string(snippet_len) + " poses, got " +
                         std::to_string(pred.size()));
  }
  AteResult r;
  const std::size_t n = static_cast<std::size_t>(snippet_len);
  for (std::size_t start = 0; start + n <= pred.size(); ++start) {
    Eigen::Matrix3Xd p(3, static_cast<Eigen::Index>(n));
    Eigen::Matrix3Xd g(3, static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
      p.col(static_cast<Eigen::Index>(j)) = pred.poses[start + j].topRightCorner<3, 1>();
      g.col(static_cast<Eigen::Index>(j)) = gt.poses[start + j].topRightCorner<3, 1>();
    }
    r.per_window.push_back(aligned_rmse(p, g));
  }
  const double k = static_cast<double>(r.per_window.size());
  for (double v : r.per_window) r.mean += v;
  r.mean /= k;
  for (double v : r.per_window) r.std += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(r.std / k);
  return r;
}

}  // namespace ddvo
