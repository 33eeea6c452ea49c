#pragma once

// Raster containers and the sampling / filtering operators used by the
// solvers and losses. Values are double precision; photometric channels are
// expected in [0, 1], depth rasters are unconstrained.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ddvo/errors.hpp"

namespace ddvo {

class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, int channels = 1, double fill = 0.0)
      : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0 || channels < 1) throw ShapeMismatch("invalid image shape");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }
  ImageBuffer(int width, int height, int channels, std::vector<double> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    if (width < 0 || height < 0 || channels < 1 ||
        data_.size() != static_cast<std::size_t>(width) * height * channels) {
      throw ShapeMismatch("image data length does not match width*height*channels");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_grid(const ImageBuffer& o) const { return width_ == o.width_ && height_ == o.height_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double mean() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return data_.empty() ? 0.0 : s / static_cast<double>(data_.size());
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

// Single-channel raster of inverse depths d >= 0.
using InverseDepthMap = ImageBuffer;

inline void check_inverse_depth(const InverseDepthMap& d) {
  if (d.channels() != 1) throw ShapeMismatch("inverse depth map must have one channel");
  for (double v : d.data()) {
    if (!std::isfinite(v) || v < 0.0) throw ShapeMismatch("inverse depth must be finite and >= 0");
  }
}

struct ValidityMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> valid;

  ValidityMask() = default;
  ValidityMask(int w, int h, bool fill = false)
      : width(w), height(h), valid(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v;
    return n;
  }
  double fraction() const {
    return valid.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(valid.size());
  }
};

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

inline ImageBuffer to_grayscale(const ImageBuffer& img) {
  if (img.channels() == 1) return img;
  ImageBuffer out(img.width(), img.height(), 1);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (img.channels() >= 3) {
        out.at(x, y) = kLumaR * img.at(x, y, 0) + kLumaG * img.at(x, y, 1) + kLumaB * img.at(x, y, 2);
      } else {
        double s = 0.0;
        for (int c = 0; c < img.channels(); ++c) s += img.at(x, y, c);
        out.at(x, y) = s / img.channels();
      }
    }
  }
  return out;
}

// Location of a subpixel coordinate inside its bilinear cell. The cell is
// clamped so that the last row/column is reachable: x = W-1 uses the cell
// [W-2, W-1] with weight 1 on the right neighbor.
struct BilinearCell {
  int x0 = 0;
  int y0 = 0;
  double ax = 0.0;  // weight of x0 + 1
  double ay = 0.0;  // weight of y0 + 1
  bool in_view = false;
};

inline BilinearCell locate(const ImageBuffer& img, double x, double y) {
  BilinearCell cell;
  const int w = img.width();
  const int h = img.height();
  if (!(x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1) || w < 2 || h < 2) return cell;
  cell.x0 = std::min(static_cast<int>(std::floor(x)), w - 2);
  cell.y0 = std::min(static_cast<int>(std::floor(y)), h - 2);
  cell.ax = x - cell.x0;
  cell.ay = y - cell.y0;
  cell.in_view = true;
  return cell;
}

inline double sample_channel(const ImageBuffer& img, const BilinearCell& c, int ch = 0) {
  const double v00 = img.at(c.x0, c.y0, ch);
  const double v10 = img.at(c.x0 + 1, c.y0, ch);
  const double v01 = img.at(c.x0, c.y0 + 1, ch);
  const double v11 = img.at(c.x0 + 1, c.y0 + 1, ch);
  return (1.0 - c.ay) * ((1.0 - c.ax) * v00 + c.ax * v10) + c.ay * ((1.0 - c.ax) * v01 + c.ax * v11);
}

// Derivative of sample_channel with respect to (x, y); constant per cell.
inline Eigen::Vector2d sample_grad_channel(const ImageBuffer& img, const BilinearCell& c, int ch = 0) {
  const double v00 = img.at(c.x0, c.y0, ch);
  const double v10 = img.at(c.x0 + 1, c.y0, ch);
  const double v01 = img.at(c.x0, c.y0 + 1, ch);
  const double v11 = img.at(c.x0 + 1, c.y0 + 1, ch);
  return {(1.0 - c.ay) * (v10 - v00) + c.ay * (v11 - v01),
          (1.0 - c.ax) * (v01 - v00) + c.ax * (v11 - v10)};
}

struct Sample {
  Eigen::VectorXd value;
  bool in_view = false;
};

/// Bilinear interpolation at pixel coordinate (x, y). Out of view (any of the
/// four neighbors outside the image) yields zeros and in_view = false.
inline Sample sample_bilinear(const ImageBuffer& img, const Eigen::Vector2d& pos) {
  Sample s{Eigen::VectorXd::Zero(img.channels()), false};
  const BilinearCell cell = locate(img, pos.x(), pos.y());
  if (!cell.in_view) return s;
  s.in_view = true;
  for (int c = 0; c < img.channels(); ++c) s.value(c) = sample_channel(img, cell, c);
  return s;
}

/// Per-channel gradient of sample_bilinear (rows = channels, cols = d/dx, d/dy).
/// Zero when out of view.
inline Eigen::MatrixX2d sample_bilinear_grad(const ImageBuffer& img, const Eigen::Vector2d& pos) {
  Eigen::MatrixX2d g = Eigen::MatrixX2d::Zero(img.channels(), 2);
  const BilinearCell cell = locate(img, pos.x(), pos.y());
  if (!cell.in_view) return g;
  for (int c = 0; c < img.channels(); ++c) g.row(c) = sample_grad_channel(img, cell, c).transpose();
  return g;
}

inline void require_min_size(const ImageBuffer& img, int min_w, int min_h, const char* op) {
  if (img.width() < min_w || img.height() < min_h) {
    throw GridTooSmall(std::string(op) + ": image " + std::to_string(img.width()) + "x" +
                       std::to_string(img.height()) + " is smaller than " + std::to_string(min_w) + "x" +
                       std::to_string(min_h));
  }
}

/// Image gradient: central differences inside, one-sided at the border.
/// Output has 2K channels laid out (d/dx, d/dy) per input channel.
inline ImageBuffer spatial_gradient(const ImageBuffer& img) {
  require_min_size(img, 3, 3, "spatial_gradient");
  const int w = img.width();
  const int h = img.height();
  const int k = img.channels();
  ImageBuffer out(w, h, 2 * k);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < k; ++c) {
        double gx;
        double gy;
        if (x == 0) {
          gx = img.at(1, y, c) - img.at(0, y, c);
        } else if (x == w - 1) {
          gx = img.at(w - 1, y, c) - img.at(w - 2, y, c);
        } else {
          gx = 0.5 * (img.at(x + 1, y, c) - img.at(x - 1, y, c));
        }
        if (y == 0) {
          gy = img.at(x, 1, c) - img.at(x, 0, c);
        } else if (y == h - 1) {
          gy = img.at(x, h - 1, c) - img.at(x, h - 2, c);
        } else {
          gy = 0.5 * (img.at(x, y + 1, c) - img.at(x, y - 1, c));
        }
        out.at(x, y, 2 * c) = gx;
        out.at(x, y, 2 * c + 1) = gy;
      }
    }
  }
  return out;
}

/// |4-neighbor Laplacian| with replicate padding, averaged across channels.
inline ImageBuffer laplacian(const ImageBuffer& img) {
  require_min_size(img, 3, 3, "laplacian");
  const int w = img.width();
  const int h = img.height();
  const int k = img.channels();
  ImageBuffer out(w, h, 1);
  for (int y = 0; y < h; ++y) {
    const int ym = std::max(y - 1, 0);
    const int yp = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0);
      const int xp = std::min(x + 1, w - 1);
      double acc = 0.0;
      for (int c = 0; c < k; ++c) {
        const double lap = img.at(xm, y, c) + img.at(xp, y, c) + img.at(x, ym, c) + img.at(x, yp, c) -
                           4.0 * img.at(x, y, c);
        acc += std::abs(lap);
      }
      out.at(x, y) = acc / k;
    }
  }
  return out;
}

/// 2x2 area-average pooling; an odd trailing row/column is dropped.
inline ImageBuffer downsample2(const ImageBuffer& img) {
  require_min_size(img, 2, 2, "downsample2");
  const int w = img.width() / 2;
  const int h = img.height() / 2;
  ImageBuffer out(w, h, img.channels());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        out.at(x, y, c) = 0.25 * (img.at(2 * x, 2 * y, c) + img.at(2 * x + 1, 2 * y, c) +
                                  img.at(2 * x, 2 * y + 1, c) + img.at(2 * x + 1, 2 * y + 1, c));
      }
    }
  }
  return out;
}

/// Adjoint of downsample2: spreads each coarse gradient a quarter to each of
/// its four fine pixels. Dropped rows/columns receive zero.
inline ImageBuffer downsample2_adjoint(const ImageBuffer& coarse_grad, int fine_width, int fine_height) {
  ImageBuffer fine(fine_width, fine_height, coarse_grad.channels());
  for (int y = 0; y < coarse_grad.height(); ++y) {
    for (int x = 0; x < coarse_grad.width(); ++x) {
      for (int c = 0; c < coarse_grad.channels(); ++c) {
        const double g = 0.25 * coarse_grad.at(x, y, c);
        fine.at(2 * x, 2 * y, c) += g;
        fine.at(2 * x + 1, 2 * y, c) += g;
        fine.at(2 * x, 2 * y + 1, c) += g;
        fine.at(2 * x + 1, 2 * y + 1, c) += g;
      }
    }
  }
  return fine;
}

struct ImagePyramid {
  std::vector<ImageBuffer> levels;  // level 0 finest

  std::size_t size() const { return levels.size(); }
  const ImageBuffer& operator[](std::size_t i) const { return levels[i]; }
};

inline ImagePyramid build_pyramid(const ImageBuffer& img, int levels) {
  if (levels < 1) throw GridTooSmall("build_pyramid: level count must be >= 1");
  const int need = 1 << (levels - 1);
  if (img.width() < need || img.height() < need) {
    throw GridTooSmall("build_pyramid: " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                       " cannot support " + std::to_string(levels) + " levels");
  }
  ImagePyramid p;
  p.levels.reserve(levels);
  p.levels.push_back(img);
  for (int l = 1; l < levels; ++l) p.levels.push_back(downsample2(p.levels.back()));
  return p;
}

}  // namespace ddvo
