#pragma once
// Cross-camera consistency of fused clouds against the analytic capsules
// that produced them.
//
// Raw per-class centroids from two cameras are not comparable: each camera
// sees a different side of a capsule, so surface centroids differ by up to
// a radius. Each point is instead mapped to the capsule axis by removing
// its clothed radius along the outward normal. The error left in that
// estimate is exactly the reconstruction error (depth quantization plus
// clothing). Per-class centroids of these estimates are averaged over
// axial bins that both cameras observe, so differing visibility along the
// axis does not bias the comparison.

#include <algorithm>
#include <map>
#include <vector>

#include "mvdp/dense_classifier.hpp"
#include "mvdp/synth_renderer.hpp"
#include "mvdp/view_aggregation.hpp"

namespace test {

struct ConsistencyResult {
  std::vector<double> disagreement;  // meters, one per (class, camera pair)
  double bound = 0.0;                // 2 half-steps + clothing inflation
};

inline ConsistencyResult centroid_consistency(const mvdp::Sample& smp, const mvdp::PosedGeometry& geo,
                                              double clothing_factor, std::size_t min_points = 30) {
  using mvdp::Vec3;
  constexpr int kBins = 10;
  const int n_cams = static_cast<int>(smp.views.size());
  ConsistencyResult out;
  double max_r = 0.0;
  for (const auto& c : geo.capsules) max_r = std::max(max_r, c.radius);
  out.bound = mvdp::kQuantizationStep + (clothing_factor - 1.0) * max_r;

  struct Bin {
    Vec3 sum = Vec3::Zero();
    int n = 0;
  };
  // label -> camera -> bins, plus point counts
  std::map<int, std::vector<std::vector<Bin>>> bins;
  std::map<int, std::vector<std::size_t>> counts;
  const mvdp::OracleClassifier oracle;
  for (int c = 0; c < n_cams; ++c) {
    const auto& v = smp.views[static_cast<std::size_t>(c)];
    if (v.depth.foreground_count() == 0) continue;
    const auto map = oracle.classify(v.depth, &v.labels, 0);
    const std::vector<mvdp::FusionView> views{{&map, &v.depth, v.camera}};
    for (const auto& p : mvdp::fuse(views, mvdp::RigidTransform{})) {
      double best = 1e300, best_t = 0.0;
      Vec3 estimate = Vec3::Zero();
      for (const auto& cap : geo.capsules) {
        if (cap.label != p.label) continue;
        const Vec3 d = cap.b - cap.a;
        const double len2 = d.squaredNorm();
        const double t = len2 > 0 ? std::clamp((p.position - cap.a).dot(d) / len2, 0.0, 1.0) : 0.0;
        const Vec3 q = cap.a + t * d;
        const double r = cap.radius * clothing_factor;
        const double off = std::abs((p.position - q).norm() - r);
        if (off < best) {
          best = off;
          best_t = t;
          estimate = p.position - r * (p.position - q).normalized();
        }
      }
      auto& per_cam = bins[p.label];
      if (per_cam.empty()) {
        per_cam.assign(static_cast<std::size_t>(n_cams), std::vector<Bin>(kBins));
        counts[p.label].assign(static_cast<std::size_t>(n_cams), 0);
      }
      auto& b = per_cam[static_cast<std::size_t>(c)][static_cast<std::size_t>(std::min(kBins - 1, static_cast<int>(best_t * kBins)))];
      b.sum += estimate;
      ++b.n;
      ++counts[p.label][static_cast<std::size_t>(c)];
    }
  }
  for (const auto& [label, per_cam] : bins) {
    const auto& n = counts[label];
    for (int a = 0; a < n_cams; ++a)
      for (int b = a + 1; b < n_cams; ++b) {
        if (n[static_cast<std::size_t>(a)] < min_points || n[static_cast<std::size_t>(b)] < min_points) continue;
        Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
        int shared = 0;
        for (int k = 0; k < kBins; ++k) {
          const auto& ba = per_cam[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)];
          const auto& bb = per_cam[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
          if (ba.n < 3 || bb.n < 3) continue;
          ca += ba.sum / ba.n;
          cb += bb.sum / bb.n;
          ++shared;
        }
        if (shared > 0) out.disagreement.push_back((ca - cb).norm() / shared);
      }
  }
  return out;
}

}  // namespace test
