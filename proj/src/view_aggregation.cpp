#include "mvdp/view_aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mvdp/error.hpp"
#include "mvdp/parallel.hpp"

namespace mvdp {

RigidTransform reference_pose(std::span<const CameraParams> cameras, ReferenceFrame frame) {
  if (cameras.empty()) throw Error(ErrorCode::NoViews, "no cameras to anchor the reference frame");
  return frame == ReferenceFrame::World ? RigidTransform::identity() : cameras.front().camera_to_world;
}

LabeledPointCloud fuse(std::span<const FusionView> views, const RigidTransform& reference, double threshold) {
  if (views.empty()) throw Error(ErrorCode::NoViews, "fuse needs at least one view");
  const RigidTransform world_to_ref = reference.inverse();
  std::vector<LabeledPointCloud> per_view(views.size());
  for (const auto& v : views) {
    if (v.probabilities == nullptr || v.depth == nullptr) throw Error(ErrorCode::InvalidArgument, "incomplete view");
    if (v.probabilities->width != v.depth->width || v.probabilities->height != v.depth->height ||
        v.camera.intrinsics.width != v.depth->width || v.camera.intrinsics.height != v.depth->height) {
      throw Error(ErrorCode::ShapeMismatch, "probability map, depth frame and intrinsics disagree in size");
    }
  }
  parallel_for(views.size(), [&](std::size_t vi) {
    const auto& v = views[vi];
    const auto& K = v.camera.intrinsics;
    const RigidTransform cam_to_ref = world_to_ref * v.camera.camera_to_world;
    const int C = v.probabilities->channels;
    auto& out = per_view[vi];
    for (int y = 0; y < v.depth->height; ++y) {
      for (int x = 0; x < v.depth->width; ++x) {
        const auto level = v.depth->at(x, y);
        if (level == kBackgroundLevel) continue;
        const auto p = v.probabilities->pixel(x, y);
        const int label = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        if (label == 0 || label >= C || !(p[static_cast<std::size_t>(label)] >= threshold)) continue;
        const double z = dequantize_depth(level);
        const Vec3 cam((x - K.principal_x) / K.focal_x * z, (y - K.principal_y) / K.focal_y * z, z);
        out.push_back({cam_to_ref.apply(cam), static_cast<std::uint8_t>(label), p[static_cast<std::size_t>(label)],
                       static_cast<std::uint8_t>(vi)});
      }
    }
  });
  LabeledPointCloud cloud;
  for (auto& pv : per_view) cloud.insert(cloud.end(), pv.begin(), pv.end());
  if (cloud.empty()) throw Error(ErrorCode::NoForegroundPoints, "no pixel passed the probability threshold");
  return cloud;
}

std::array<double, kStatsPerClass> ClassStats::values() const {
  std::array<double, kStatsPerClass> v{};
  for (int i = 0; i < 3; ++i) {
    v[static_cast<std::size_t>(kMedianOffset + i)] = median[i];
    v[static_cast<std::size_t>(kEigenvalueOffset + i)] = eigenvalues[static_cast<std::size_t>(i)];
    v[static_cast<std::size_t>(kStdOffset + i)] = stddev[i];
    v[static_cast<std::size_t>(kMinOffset + i)] = min[i];
    v[static_cast<std::size_t>(kMaxOffset + i)] = max[i];
    for (int j = 0; j < 3; ++j) v[static_cast<std::size_t>(kCovarianceOffset + 3 * i + j)] = covariance(i, j);
  }
  return v;
}

ClassStats compute_stats(std::span<const Vec3> input) {
  ClassStats s;
  if (input.empty()) return s;
  // Accumulate in a canonical order so the result does not depend on the
  // order in which views and pixels were visited.
  std::vector<Vec3> positions(input.begin(), input.end());
  std::sort(positions.begin(), positions.end(), [](const Vec3& a, const Vec3& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  const std::size_t n = positions.size();
  s.present = true;
  s.count = n;
  Vec3 mean = Vec3::Zero();
  s.min = positions.front();
  s.max = positions.front();
  for (const auto& p : positions) {
    mean += p;
    s.min = s.min.cwiseMin(p);
    s.max = s.max.cwiseMax(p);
  }
  mean /= static_cast<double>(n);
  for (const auto& p : positions) {
    const Vec3 d = p - mean;
    s.covariance += d * d.transpose();
  }
  s.covariance /= static_cast<double>(n);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
  s.eigenvalues = sym_eigenvalues(SymMat3::from_matrix(s.covariance));
  for (int i = 0; i < 3; ++i) s.stddev[i] = std::sqrt(std::max(0.0, s.covariance(i, i)));

  std::vector<double> axis(n);
  for (int i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < n; ++k) axis[k] = positions[k][i];
    const auto mid = axis.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(axis.begin(), mid, axis.end());
    double m = *mid;
    if (n % 2 == 0) m = 0.5 * (m + *std::max_element(axis.begin(), mid));
    s.median[i] = m;
  }
  return s;
}

ClassStats class_statistics(const LabeledPointCloud& cloud, int label) {
  std::vector<Vec3> pts;
  for (const auto& p : cloud) {
    if (p.label == label) pts.push_back(p.position);
  }
  return compute_stats(pts);
}

FeatureVector extract_features(const LabeledPointCloud& cloud, int classes) {
  FeatureVector f(classes);
  std::vector<std::vector<Vec3>> buckets(static_cast<std::size_t>(classes) + 1);
  for (const auto& p : cloud) {
    if (p.label >= 1 && p.label <= classes) buckets[p.label].push_back(p.position);
  }
  for (int c = 1; c <= classes; ++c) {
    const auto s = compute_stats(buckets[static_cast<std::size_t>(c)]);
    if (!s.present) continue;
    const auto v = s.values();
    std::copy(v.begin(), v.end(), f.values.begin() + static_cast<std::ptrdiff_t>(c - 1) * kStatsPerClass);
    f.present[static_cast<std::size_t>(c - 1)] = 1;
  }
  return f;
}

std::string feature_name(std::size_t index) {
  static const char* kAxes[3] = {"x", "y", "z"};
  const auto cls = index / kStatsPerClass + 1;
  const auto k = static_cast<int>(index % kStatsPerClass);
  std::string stat;
  if (k < kCovarianceOffset) {
    stat = std::string("median_") + kAxes[k - kMedianOffset];
  } else if (k < kEigenvalueOffset) {
    const int r = (k - kCovarianceOffset) / 3;
    const int c = (k - kCovarianceOffset) % 3;
    stat = std::string("cov_") + kAxes[r] + kAxes[c];
  } else if (k < kStdOffset) {
    stat = "eig" + std::to_string(k - kEigenvalueOffset);
  } else if (k < kMinOffset) {
    stat = std::string("std_") + kAxes[k - kStdOffset];
  } else if (k < kMaxOffset) {
    stat = std::string("min_") + kAxes[k - kMinOffset];
  } else {
    stat = std::string("max_") + kAxes[k - kMaxOffset];
  }
  char prefix[32];
  std::snprintf(prefix, sizeof prefix, "c%03zu.", cls);
  return prefix + stat;
}

void write_point_cloud(const std::filesystem::path& path, const LabeledPointCloud& cloud) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  char line[128];
  for (const auto& p : cloud) {
    std::snprintf(line, sizeof line, "%.6f %.6f %.6f %d %.6f %d\n", p.position.x(), p.position.y(), p.position.z(),
                  p.label, static_cast<double>(p.probability), p.camera);
    out << line;
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

}  // namespace mvdp
