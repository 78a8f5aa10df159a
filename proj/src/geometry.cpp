#include "mvdp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mvdp/error.hpp"

namespace mvdp {

CameraIntrinsics CameraIntrinsics::from_fov(int width, int height, double horizontal_fov_rad) {
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  k.focal_x = 0.5 * width / std::tan(0.5 * horizontal_fov_rad);
  k.focal_y = k.focal_x;
  k.principal_x = 0.5 * (width - 1);
  k.principal_y = 0.5 * (height - 1);
  return k;
}

void CameraIntrinsics::validate() const {
  if (!(focal_x > 0.0) || !(focal_y > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  }
  if (width < 16 || height < 16) {
    throw Error(ErrorCode::InvalidArgument, "image must be at least 16x16");
  }
  if (principal_x < 0.0 || principal_x > width - 1 || principal_y < 0.0 || principal_y > height - 1) {
    throw Error(ErrorCode::InvalidArgument, "principal point outside the image");
  }
}

bool CameraIntrinsics::contains(const Vec2& pixel) const {
  return pixel.x() >= -0.5 && pixel.x() <= width - 0.5 && pixel.y() >= -0.5 && pixel.y() <= height - 0.5;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

void RigidTransform::validate() const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= 1e-9) || !(std::abs(rotation.determinant() - 1.0) <= 1e-9)) {
    throw Error(ErrorCode::InvalidArgument, "rotation is not a proper orthonormal matrix");
  }
  if (!translation.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "translation is not finite");
  }
}

Projection project(const Vec3& world_point, const CameraParams& cam) {
  const Vec3 p = cam.camera_to_world.apply_inverse(world_point);
  if (!(p.z() > 0.0)) {
    throw Error(ErrorCode::PointBehindCamera, "camera-space z = " + std::to_string(p.z()));
  }
  const auto& k = cam.intrinsics;
  return {Vec2(k.focal_x * p.x() / p.z() + k.principal_x, k.focal_y * p.y() / p.z() + k.principal_y), p.z()};
}

Vec3 backproject(const Vec2& pixel, double depth, const CameraParams& cam) {
  if (!(depth > 0.0)) {
    throw Error(ErrorCode::NonPositiveDepth, "depth = " + std::to_string(depth));
  }
  const auto& k = cam.intrinsics;
  if (!k.contains(pixel)) {
    throw Error(ErrorCode::InvalidArgument, "pixel outside the image");
  }
  const Vec3 p((pixel.x() - k.principal_x) / k.focal_x * depth, (pixel.y() - k.principal_y) / k.focal_y * depth,
               depth);
  return cam.camera_to_world.apply(p);
}

Mat3 axis_angle_to_matrix(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-15) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 down = -up + up.dot(forward) * forward;
  if (down.norm() < 1e-9) {
    // Looking straight along the up axis; any perpendicular works.
    down = forward.unitOrthogonal();
  }
  down.normalize();
  const Vec3 right = down.cross(forward);
  RigidTransform t;
  t.rotation.col(0) = right;
  t.rotation.col(1) = down;
  t.rotation.col(2) = forward;
  t.translation = eye;
  return t;
}

SymMat3 SymMat3::from_matrix(const Mat3& m) {
  return {m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), 0.5 * (m(0, 2) + m(2, 0)),
          m(1, 1), 0.5 * (m(1, 2) + m(2, 1)), m(2, 2)};
}

Mat3 SymMat3::to_matrix() const {
  Mat3 m;
  m << xx, xy, xz, xy, yy, yz, xz, yz, zz;
  return m;
}

double SymMat3::determinant() const {
  return xx * (yy * zz - yz * yz) - xy * (xy * zz - yz * xz) + xz * (xy * yz - yy * xz);
}

double SymMat3::frobenius_norm() const {
  return std::sqrt(xx * xx + yy * yy + zz * zz + 2.0 * (xy * xy + xz * xz + yz * yz));
}

std::array<double, 3> sym_eigenvalues(const SymMat3& m) {
  double a[3][3] = {{m.xx, m.xy, m.xz}, {m.xy, m.yy, m.yz}, {m.xz, m.yz, m.zz}};
  const double scale = m.frobenius_norm();
  const double tol = 1e-12 * scale;
  constexpr int kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};

  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = std::sqrt(2.0 * (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]));
    if (off <= tol) break;
    for (const auto& pq : kPairs) {
      const int p = pq[0];
      const int q = pq[1];
      const double apq = a[p][q];
      if (apq == 0.0) continue;
      const double theta = (a[q][q] - a[p][p]) / (2.0 * apq);
      const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
      const double c = 1.0 / std::sqrt(t * t + 1.0);
      const double s = t * c;
      const int r = 3 - p - q;
      const double arp = a[r][p];
      const double arq = a[r][q];
      a[p][p] -= t * apq;
      a[q][q] += t * apq;
      a[p][q] = a[q][p] = 0.0;
      a[r][p] = a[p][r] = c * arp - s * arq;
      a[r][q] = a[q][r] = s * arp + c * arq;
    }
  }
  std::array<double, 3> eig = {a[0][0], a[1][1], a[2][2]};
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

}  // namespace mvdp
