#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mvdp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Pixel convention: pixel centers sit at integer coordinates, origin at the
// top-left, +x right, +y down. Camera space: +z forward, +x right, +y down
// (right-handed). Extrinsics are stored camera-to-world.

struct CameraIntrinsics {
  double focal_x = 0.0;
  double focal_y = 0.0;
  double principal_x = 0.0;
  double principal_y = 0.0;
  int width = 0;
  int height = 0;

  /// Square-pixel intrinsics with the principal point at the image center
  /// and the given horizontal field of view.
  static CameraIntrinsics from_fov(int width, int height, double horizontal_fov_rad);

  /// Throws InvalidArgument unless focal > 0, the principal point lies in the
  /// image and both dimensions are at least 16.
  void validate() const;
  bool contains(const Vec2& pixel) const;
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_inverse(const Vec3& p) const { return rotation.transpose() * (p - translation); }
  RigidTransform inverse() const;

  /// (a * b).apply(p) == a.apply(b.apply(p))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);

  /// Throws InvalidArgument unless the rotation is orthonormal with det +1
  /// (tolerance 1e-9).
  void validate() const;
};

struct CameraParams {
  CameraIntrinsics intrinsics;
  RigidTransform camera_to_world;

  void validate() const {
    intrinsics.validate();
    camera_to_world.validate();
  }
};

struct Projection {
  Vec2 pixel;
  double depth;
};

/// Throws PointBehindCamera when the camera-space z is not positive.
Projection project(const Vec3& world_point, const CameraParams& cam);

/// Throws NonPositiveDepth for depth <= 0 and InvalidArgument for pixels
/// outside the image.
Vec3 backproject(const Vec2& pixel, double depth, const CameraParams& cam);

/// Rotation matrix of an axis-angle vector (angle = norm).
Mat3 axis_angle_to_matrix(const Vec3& axis_angle);

/// Camera-to-world pose of a camera at `eye` looking at `target`, with image
/// "down" aligned to -up.
RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitY());

/// Symmetric 3x3 matrix stored by its six unique entries.
struct SymMat3 {
  double xx = 0, xy = 0, xz = 0, yy = 0, yz = 0, zz = 0;

  static SymMat3 from_matrix(const Mat3& m);
  static SymMat3 identity() { return {1, 0, 0, 1, 0, 1}; }
  static SymMat3 diagonal(double a, double b, double c) { return {a, 0, 0, b, 0, c}; }

  Mat3 to_matrix() const;
  double trace() const { return xx + yy + zz; }
  double determinant() const;
  double frobenius_norm() const;
};

/// Eigenvalues in descending order, computed with cyclic Jacobi rotations.
std::array<double, 3> sym_eigenvalues(const SymMat3& m);

}  // namespace mvdp
