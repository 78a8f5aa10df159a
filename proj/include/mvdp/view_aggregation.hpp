#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvdp/dense_classifier.hpp"
#include "mvdp/geometry.hpp"

namespace mvdp {

struct LabeledPoint {
  Vec3 position;  // reference frame, meters
  std::uint8_t label = 0;  // 1..P
  float probability = 0.0f;
  std::uint8_t camera = 0;
};

using LabeledPointCloud = std::vector<LabeledPoint>;

/// One camera's classification together with the depth it was computed from.
/// The map must be in the frame's own pixel coordinates.
struct FusionView {
  const ProbabilityMap* probabilities = nullptr;
  const DepthFrame* depth = nullptr;
  CameraParams camera;
};

enum class ReferenceFrame : std::uint8_t { FirstCamera, World };

/// Pose of the reference frame in the world: camera 0's camera-to-world
/// pose, or identity. Throws NoViews.
RigidTransform reference_pose(std::span<const CameraParams> cameras, ReferenceFrame frame);

inline constexpr double kDefaultProbabilityThreshold = 0.3;

/// Backprojects every return whose most probable class is a body part with
/// probability >= threshold, expressed in the frame whose world pose is
/// `reference`. Throws NoViews, ShapeMismatch, NoForegroundPoints.
LabeledPointCloud fuse(std::span<const FusionView> views, const RigidTransform& reference,
                       double threshold = kDefaultProbabilityThreshold);

// Per-class statistics block, 24 values in this order:
//   [0, 3)   median x, y, z
//   [3, 12)  covariance, row-major 3x3
//   [12, 15) covariance eigenvalues, descending
//   [15, 18) standard deviation x, y, z
//   [18, 21) minimum x, y, z
//   [21, 24) maximum x, y, z
inline constexpr int kStatsPerClass = 24;
inline constexpr int kMedianOffset = 0;
inline constexpr int kCovarianceOffset = 3;
inline constexpr int kEigenvalueOffset = 12;
inline constexpr int kStdOffset = 15;
inline constexpr int kMinOffset = 18;
inline constexpr int kMaxOffset = 21;

struct ClassStats {
  bool present = false;
  std::size_t count = 0;
  Vec3 median = Vec3::Zero();
  Mat3 covariance = Mat3::Zero();  // about the mean, divided by count
  std::array<double, 3> eigenvalues{};
  Vec3 stddev = Vec3::Zero();
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  /// The 24-value block in the documented order.
  std::array<double, kStatsPerClass> values() const;
};

/// Statistics of the points in `positions`; an empty span gives an absent,
/// all-zero entry.
ClassStats compute_stats(std::span<const Vec3> positions);
ClassStats class_statistics(const LabeledPointCloud& cloud, int label);

struct FeatureVector {
  int classes = 0;                    // P
  std::vector<double> values;         // 24 * P, class 1 first
  std::vector<std::uint8_t> present;  // P flags

  FeatureVector() = default;
  explicit FeatureVector(int p)
      : classes(p), values(static_cast<std::size_t>(kStatsPerClass) * p, 0.0), present(static_cast<std::size_t>(p), 0) {}
  std::span<const double> block(int label) const {
    return {values.data() + static_cast<std::size_t>(label - 1) * kStatsPerClass, kStatsPerClass};
  }
};

/// Points with labels outside 1..P are ignored.
FeatureVector extract_features(const LabeledPointCloud& cloud, int classes);

/// Name of feature `index`, e.g. "c007.cov_xy".
std::string feature_name(std::size_t index);

/// Plain-text dump, one "x y z label prob cam" line per point.
void write_point_cloud(const std::filesystem::path& path, const LabeledPointCloud& cloud);

}  // namespace mvdp
