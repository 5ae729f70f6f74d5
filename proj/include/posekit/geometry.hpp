#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <array>
#include <cmath>
#include <string>

#include "posekit/common.hpp"
#include "posekit/errors.hpp"
#include "posekit/object_model.hpp"

namespace posekit {

inline constexpr double kRot3Tol = 1e-9;

namespace detail {
inline bool finite(const Mat3& m) { return m.allFinite(); }
}  // namespace detail

// A validated rotation matrix: R^T R = I and det R = +1, both within 1e-9.
class Rot3 {
 public:
  Rot3() : m_(Mat3::Identity()) {}

  explicit Rot3(const Mat3& m) : m_(m) {
    if (!detail::finite(m_)) throw Error("Rot3: non-finite entries");
    const double ortho = (m_.transpose() * m_ - Mat3::Identity()).norm();
    const double det_err = std::abs(m_.determinant() - 1.0);
    if (ortho > kRot3Tol || det_err > kRot3Tol) {
      throw Error("Rot3: invariants violated (|R^TR-I|=" + std::to_string(ortho) +
                  ", |det-1|=" + std::to_string(det_err) + ")");
    }
  }

  // Skips validation; for matrices that are rotations by construction.
  static Rot3 trusted(const Mat3& m) {
    Rot3 r;
    r.m_ = m;
    return r;
  }

  static Rot3 identity() { return Rot3(); }

  const Mat3& matrix() const { return m_; }

  Rot3 operator*(const Rot3& o) const { return trusted(m_ * o.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rot3 inverse() const { return trusted(m_.transpose()); }

 private:
  Mat3 m_;
};

// Nine unconstrained reals: a row-major 3x3 matrix before any projection.
struct NineD {
  std::array<double, 9> v{};

  static NineD from_matrix(const Mat3& m) {
    NineD n;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) n.v[3 * r + c] = m(r, c);
    return n;
  }

  Mat3 matrix() const {
    Mat3 m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = v[3 * r + c];
    return m;
  }
};

// Two regressed 3-vectors for Gram-Schmidt orthonormalization.
struct SixD {
  Vec3 a = Vec3::UnitX();
  Vec3 b = Vec3::UnitY();
};

struct Quat {
  double w = 1, x = 0, y = 0, z = 0;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

struct Pose {
  Rot3 r;
  Vec3 t = Vec3::Zero();
};

// Pinhole intrinsics plus the known object distance range [dist_min, dist_max].
struct CameraModel {
  double fx = 500, fy = 500, cx = 320, cy = 240;
  double dist_min = 0.2, dist_max = 2.0;  // meters

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw Error("CameraModel: fx, fy must be positive");
    if (!(dist_min > 0) || !(dist_min < dist_max)) {
      throw Error("CameraModel: need 0 < dist_min < dist_max");
    }
  }

  Mat3 k() const {
    Mat3 m;
    m << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return m;
  }

  Mat3 k_inv() const {
    Mat3 m;
    m << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
    return m;
  }
};

struct Keypoint2D {
  double u = 0, v = 0;
  bool visible = true;
};

// SVD factors of a projection onto SO(3): R = U * diag(1,1,sign) * V^T.
struct SvdProjection {
  Rot3 r = Rot3::identity();
  Mat3 u = Mat3::Identity();
  Mat3 v = Mat3::Identity();
  Vec3 sigma = Vec3::Ones();  // descending
  double sign = 1.0;          // det(U V^T)
};

// Nearest rotation to M in Frobenius norm, constrained to det = +1.
// M = U S V^T gives R = U diag(1,1,det(UV^T)) V^T; the determinant factor
// flips the smallest singular direction when plain UV^T would be a reflection.
inline SvdProjection svd_project_so3_full(const Mat3& m) {
  if (!detail::finite(m)) throw DegenerateMatrix("svd_project_so3: non-finite input");
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  SvdProjection out;
  out.u = svd.matrixU();
  out.v = svd.matrixV();
  out.sigma = svd.singularValues();
  if (out.sigma(1) < 1e-12) {
    throw DegenerateMatrix("svd_project_so3: rank < 2 (two singular values below 1e-12)");
  }
  out.sign = (out.u * out.v.transpose()).determinant() > 0 ? 1.0 : -1.0;
  Mat3 d = Mat3::Identity();
  d(2, 2) = out.sign;
  out.r = Rot3::trusted(out.u * d * out.v.transpose());
  return out;
}

inline Rot3 svd_project_so3(const NineD& nine) {
  return svd_project_so3_full(nine.matrix()).r;
}

inline Rot3 svd_project_so3(const Mat3& m) { return svd_project_so3_full(m).r; }

// Gram-Schmidt: col1 = a/|a|, col2 = orthogonalized b, col3 = col1 x col2.
inline Rot3 gso_to_rot(const SixD& s) {
  const double na = s.a.norm();
  if (!(na > 1e-12)) throw DegenerateInput("gso_to_rot: first vector ~ zero");
  const Vec3 c1 = s.a / na;
  const Vec3 u2 = s.b - s.b.dot(c1) * c1;
  const double nu = u2.norm();
  if (!(nu > 1e-12)) throw DegenerateInput("gso_to_rot: vectors parallel or second ~ zero");
  const Vec3 c2 = u2 / nu;
  const Vec3 c3 = c1.cross(c2);
  Mat3 m;
  m.col(0) = c1;
  m.col(1) = c2;
  m.col(2) = c3;
  return Rot3::trusted(m);
}

// Normalizes internally, so q and -q map to the same rotation.
inline Rot3 quat_to_rot(const Quat& q) {
  const double n = q.norm();
  if (!(n > 1e-15)) throw DegenerateInput("quat_to_rot: zero quaternion");
  const double w = q.w / n, x = q.x / n, y = q.y / n, z = q.z / n;
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return Rot3::trusted(m);
}

inline Rot3 rot_x(double a) {
  Mat3 m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return Rot3::trusted(m);
}

inline Rot3 rot_y(double a) {
  Mat3 m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return Rot3::trusted(m);
}

// Rotation about the camera principal (Z) axis.
inline Rot3 rot_z(double a) {
  Mat3 m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return Rot3::trusted(m);
}

// ZYX convention: R = Rz(yaw) * Ry(pitch) * Rx(roll).
inline Rot3 euler_to_rot(double yaw, double pitch, double roll) {
  return rot_z(yaw) * rot_y(pitch) * rot_x(roll);
}

// Shortest rotation angle between two orientations, in [0, pi].
inline double geodesic_distance(const Rot3& a, const Rot3& b) {
  const double tr = (a.matrix().transpose() * b.matrix()).trace();
  const double arg = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(arg);
}

// Same angle through |R1 - R2|_F = 2*sqrt(2)*sin(theta/2). The arccos form
// floors at ~1e-8 for nearly equal rotations; this one is exact down to 0,
// so measurements and round-trip checks use it.
inline double rotation_angle(const Rot3& a, const Rot3& b) {
  const double s = std::clamp((a.matrix() - b.matrix()).norm() / (2.0 * std::sqrt(2.0)),
                              0.0, 1.0);
  return 2.0 * std::asin(s);
}

struct PixelDepth {
  double u = 0, v = 0;
  double depth = 0;  // camera-frame Z, meters
};

// Pinhole projection of an object-frame point.
inline PixelDepth project_point(const CameraModel& cam, const Pose& pose, const Vec3& x) {
  const Vec3 xc = pose.r * x + pose.t;
  if (!(xc.z() > 1e-9)) {
    throw BehindCamera("project_point: point depth " + std::to_string(xc.z()) +
                       " not in front of camera");
  }
  return PixelDepth{cam.fx * xc.x() / xc.z() + cam.cx,
                    cam.fy * xc.y() / xc.z() + cam.cy, xc.z()};
}

// t = t_z * K^-1 [o_x, o_y, 1]^T
inline Vec3 backproject_center(const CameraModel& cam, double ox, double oy, double tz) {
  if (!(tz > 0)) throw InvalidDepth("backproject_center: tz must be positive");
  return tz * Vec3((ox - cam.cx) / cam.fx, (oy - cam.cy) / cam.fy, 1.0);
}

// t_z = dist_min + sigma * (dist_max - dist_min)
inline double depth_decode(double sigma, const CameraModel& cam) {
  if (!(sigma >= 0.0 && sigma <= 1.0)) {
    throw RangeError("depth_decode: sigma must be in [0,1], got " + std::to_string(sigma));
  }
  return cam.dist_min + sigma * (cam.dist_max - cam.dist_min);
}

inline double depth_encode(double tz, const CameraModel& cam) {
  if (!(tz >= cam.dist_min && tz <= cam.dist_max)) {
    throw RangeError("depth_encode: tz outside [dist_min, dist_max]");
  }
  return (tz - cam.dist_min) / (cam.dist_max - cam.dist_min);
}

// H = K Rz(theta) K^-1. Applying H to a projection equals projecting the
// Rz(theta)-rotated point; depth is unchanged, so H is exact for any scene.
inline Mat3 homography_principal_rotation(const CameraModel& cam, double theta) {
  return cam.k() * rot_z(theta).matrix() * cam.k_inv();
}

inline Vec2 apply_homography(const Mat3& h, const Vec2& px) {
  const Vec3 q = h * Vec3(px.x(), px.y(), 1.0);
  return Vec2(q.x() / q.z(), q.y() / q.z());
}

// Projections of the 8 model-frame box corners (sign order) plus the centroid.
inline std::array<Keypoint2D, 9> bbox9_keypoints(const ObjectModel& model, const Pose& pose,
                                                 const CameraModel& cam) {
  std::array<Keypoint2D, 9> out;
  for (int i = 0; i < 8; ++i) {
    const PixelDepth p = project_point(cam, pose, model.box_corners[i]);
    out[i] = Keypoint2D{p.u, p.v, true};
  }
  const PixelDepth c = project_point(cam, pose, model.centroid);
  out[8] = Keypoint2D{c.u, c.v, true};
  return out;
}

}  // namespace posekit
