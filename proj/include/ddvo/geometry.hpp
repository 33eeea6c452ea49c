#pragma once

// Rigid-body geometry for direct alignment: poses as (translation,
// exponential coordinates), Rodrigues rotation and its logarithm, the
// inverse-depth warp x' = <R x~ + d t>, and its Jacobian at the identity.
//
// Pose convention: a pose p maps points expressed in the reference camera
// into the source camera, X_src = R(omega) X_ref + t. With inverse depth d,
// the reference point behind pixel x is x~ / d, hence the warp
// <R x~ + d t>. Parameter vectors are ordered (t_x, t_y, t_z, w_x, w_y, w_z).

#include <array>
#include <cmath>
#include <optional>
#include <utility>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <unsupported/Eigen/AutoDiff>

namespace ddvo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat26 = Eigen::Matrix<double, 2, 6>;
using Rotation3 = Eigen::Matrix3d;

template <typename T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Vec6T = Eigen::Matrix<T, 6, 1>;
template <typename T>
using Mat3T = Eigen::Matrix<T, 3, 3>;

// Points with z at or below this are treated as behind the camera.
inline constexpr double kEpsilonZ = 1e-6;
// Below this rotation angle the Taylor branches of exp/log are used.
inline constexpr double kSmallAngle = 1e-8;

struct NormalizedPoint {
  double u = 0.0;
  double v = 0.0;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  bool valid() const { return fx > 0.0 && fy > 0.0 && std::isfinite(cx) && std::isfinite(cy); }

  NormalizedPoint normalize(double px, double py) const { return {(px - cx) / fx, (py - cy) / fy}; }
  Vec2 to_pixel(const NormalizedPoint& x) const { return {fx * x.u + cx, fy * x.v + cy}; }

  // Intrinsics of the image after `levels` factor-2 area downsamplings. Pixel
  // centers move by half a pixel per halving: c -> (c + 0.5) / 2 - 0.5.
  CameraIntrinsics at_level(int levels) const {
    CameraIntrinsics k = *this;
    for (int l = 0; l < levels; ++l) {
      k.fx *= 0.5;
      k.fy *= 0.5;
      k.cx = (k.cx + 0.5) * 0.5 - 0.5;
      k.cy = (k.cy + 0.5) * 0.5 - 0.5;
    }
    return k;
  }
};

namespace detail {

inline double value_of(double x) { return x; }
template <typename D>
double value_of(const Eigen::AutoDiffScalar<D>& x) {
  return x.value();
}

}  // namespace detail

template <typename T>
Mat3T<T> skew(const Vec3T<T>& w) {
  Mat3T<T> s;
  s << T(0), -w.z(), w.y(),
       w.z(), T(0), -w.x(),
       -w.y(), w.x(), T(0);
  return s;
}

template <typename T>
Vec3T<T> vee(const Mat3T<T>& s) {
  return Vec3T<T>(s(2, 1), s(0, 2), s(1, 0));
}

/// Rotation matrix exp([omega]_x) by Rodrigues' formula. Below kSmallAngle
/// the second-order Taylor expansion I + W + W^2/2 is used.
template <typename T>
Mat3T<T> rodrigues(const Vec3T<T>& omega) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const Mat3T<T> w = skew<T>(omega);
  const T theta2 = omega.squaredNorm();
  Mat3T<T> r = Mat3T<T>::Identity();
  if (std::sqrt(detail::value_of(theta2)) < kSmallAngle) {
    r += w + T(0.5) * w * w;
    return r;
  }
  const T theta = sqrt(theta2);
  r += (sin(theta) / theta) * w + ((T(1) - cos(theta)) / theta2) * w * w;
  return r;
}

/// Matrix logarithm of a rotation, returned as exponential coordinates with
/// |omega| <= pi. Uses the first-order branch for tiny angles and an
/// eigen-axis extraction near pi where sin(theta) vanishes.
template <typename T>
Vec3T<T> rotation_log(const Mat3T<T>& r) {
  using std::atan2;
  using std::sqrt;
  const Vec3T<T> s = T(0.5) * vee<T>(r - r.transpose());
  const T c = T(0.5) * (r.trace() - T(1));
  const double s_norm = std::sqrt(detail::value_of(s.squaredNorm()));
  if (s_norm < kSmallAngle && detail::value_of(c) > 0.0) {
    return s;
  }
  if (detail::value_of(c) < -0.99) {
    // Near a half turn: recover the axis from the symmetric part.
    const T theta = atan2(sqrt(s.squaredNorm()), c);
    const Mat3T<T> b = T(0.5) * (r + r.transpose()) - c * Mat3T<T>::Identity();
    int k = 0;
    for (int i = 1; i < 3; ++i) {
      if (detail::value_of(b(i, i)) > detail::value_of(b(k, k))) k = i;
    }
    Vec3T<T> axis = b.col(k) / sqrt(b(k, k) * (T(1) - c));
    axis /= sqrt(axis.squaredNorm());
    if (detail::value_of(axis.dot(s)) < 0.0) axis = -axis;
    return theta * axis;
  }
  const T sn = sqrt(s.squaredNorm());
  const T theta = atan2(sn, c);
  return (theta / sn) * s;
}

/// Camera motion as translation plus exponential coordinates.
struct Pose6D {
  Vec3 t = Vec3::Zero();
  Vec3 omega = Vec3::Zero();

  static Pose6D identity() { return {}; }

  static Pose6D from_vector(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }
  Vec6 vector() const {
    Vec6 v;
    v << t, omega;
    return v;
  }

  Rotation3 rotation() const { return rodrigues<double>(omega); }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation();
    m.topRightCorner<3, 1>() = t;
    return m;
  }

  static Pose6D from_matrix(const Mat4& m) {
    const Mat3 r = m.topLeftCorner<3, 3>();
    return {m.topRightCorner<3, 1>(), rotation_log<double>(r)};
  }

  // Same rigid motion with |omega| reduced into [0, pi].
  Pose6D canonical() const { return {t, rotation_log<double>(rotation())}; }

  bool finite() const { return t.allFinite() && omega.allFinite(); }
};

/// Pinhole projection <P> = (x/z, y/z). Empty when P is behind the camera.
inline std::optional<NormalizedPoint> project(const Vec3& p) {
  if (!(p.z() > kEpsilonZ)) return std::nullopt;
  return NormalizedPoint{p.x() / p.z(), p.y() / p.z()};
}

inline Vec3 homogeneous(const NormalizedPoint& x) { return {x.u, x.v, 1.0}; }

inline Vec3 warp_point_3d(const NormalizedPoint& x, const Rotation3& r, const Vec3& t, double d) {
  return r * homogeneous(x) + d * t;
}

/// x' = <R(omega) x~ + d t>. Empty when the warped point is behind the camera.
inline std::optional<NormalizedPoint> warp_point(const NormalizedPoint& x, const Pose6D& p,
                                                 double d) {
  return project(warp_point_3d(x, p.rotation(), p.t, d));
}

/// Derivative of warp_point with respect to the six pose parameters at p = 0.
inline Mat26 warp_jacobian_identity(const NormalizedPoint& x, double d) {
  const double u = x.u;
  const double v = x.v;
  Mat26 j;
  j << d, 0.0, -d * u, -u * v, 1.0 + u * u, -v,
       0.0, d, -d * v, -(1.0 + v * v), u * v, u;
  return j;
}

/// Parameters of T(delta)^-1 * T(p), the inverse-compositional left update.
template <typename T>
Vec6T<T> compose_left(const Vec6T<T>& delta, const Vec6T<T>& p) {
  const Mat3T<T> rd = rodrigues<T>(Vec3T<T>(delta.template tail<3>()));
  const Mat3T<T> rp = rodrigues<T>(Vec3T<T>(p.template tail<3>()));
  const Mat3T<T> rdt = rd.transpose();
  Vec6T<T> out;
  out.template head<3>() = rdt * (Vec3T<T>(p.template head<3>()) - Vec3T<T>(delta.template head<3>()));
  out.template tail<3>() = rotation_log<T>(Mat3T<T>(rdt * rp));
  return out;
}

inline Pose6D compose_left(const Pose6D& delta, const Pose6D& p) {
  return Pose6D::from_vector(compose_left<double>(delta.vector(), p.vector()));
}

/// Parameters of T(p)^-1.
template <typename T>
Vec6T<T> invert(const Vec6T<T>& p) {
  const Mat3T<T> r = rodrigues<T>(Vec3T<T>(p.template tail<3>()));
  const Mat3T<T> rt = r.transpose();
  Vec6T<T> out;
  out.template head<3>() = -(rt * Vec3T<T>(p.template head<3>()));
  out.template tail<3>() = rotation_log<T>(rt);
  return out;
}

inline Pose6D invert(const Pose6D& p) { return Pose6D::from_vector(invert<double>(p.vector())); }

namespace detail {

template <int N>
using Jet = Eigen::AutoDiffScalar<Eigen::Matrix<double, N, 1>>;

}  // namespace detail

/// Jacobians of compose_left with respect to (delta, p), each 6x6.
inline std::pair<Mat6, Mat6> compose_left_jacobians(const Vec6& delta, const Vec6& p) {
  using J = detail::Jet<12>;
  Vec6T<J> dj;
  Vec6T<J> pj;
  for (int i = 0; i < 6; ++i) {
    dj(i) = J(delta(i), 12, i);
    pj(i) = J(p(i), 12, 6 + i);
  }
  const Vec6T<J> out = compose_left<J>(dj, pj);
  Mat6 jd;
  Mat6 jp;
  for (int r = 0; r < 6; ++r) {
    jd.row(r) = out(r).derivatives().head<6>().transpose();
    jp.row(r) = out(r).derivatives().tail<6>().transpose();
  }
  return {jd, jp};
}

/// Jacobian of invert() with respect to its argument.
inline Mat6 invert_jacobian(const Vec6& p) {
  using J = detail::Jet<6>;
  Vec6T<J> pj;
  for (int i = 0; i < 6; ++i) pj(i) = J(p(i), 6, i);
  const Vec6T<J> out = invert<J>(pj);
  Mat6 jac;
  for (int r = 0; r < 6; ++r) jac.row(r) = out(r).derivatives().transpose();
  return jac;
}

/// dR/d omega_k for k = 0, 1, 2.
inline std::array<Mat3, 3> rotation_derivatives(const Vec3& omega) {
  using J = detail::Jet<3>;
  Vec3T<J> w;
  for (int i = 0; i < 3; ++i) w(i) = J(omega(i), 3, i);
  const Mat3T<J> r = rodrigues<J>(w);
  std::array<Mat3, 3> d;
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) d[k](i, j) = r(i, j).derivatives()(k);
    }
  }
  return d;
}

}  // namespace ddvo
