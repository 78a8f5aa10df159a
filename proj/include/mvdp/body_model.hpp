#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvdp/geometry.hpp"

namespace mvdp {

/// Which shape multiplier scales a bone's rest offset.
enum class LimbGroup : std::uint8_t { Torso, Head, Arm, Leg };

enum class Side : std::uint8_t { Center, Left, Right };

struct JointSpec {
  std::string name;
  int parent = -1;  // -1 for the root
  Vec3 rest_offset = Vec3::Zero();
  LimbGroup group = LimbGroup::Torso;
};

struct Skeleton {
  std::vector<JointSpec> joints;

  int size() const { return static_cast<int>(joints.size()); }
  int index_of(std::string_view name) const;  // -1 if missing
  /// Root first, parents before children, nonzero offsets for non-root joints.
  void validate() const;
};

/// Bounds on each component of a joint's local axis-angle vector (radians).
struct JointLimit {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  bool contains(const Vec3& r, double tol = 0.0) const {
    return (r.array() >= lo.array() - tol).all() && (r.array() <= hi.array() + tol).all();
  }
};

struct PartInfo {
  int label = 0;
  std::string name;
  Side side = Side::Center;
};

/// A capsule rigidly attached to a joint frame; endpoints are given in the
/// joint's rest frame before shape scaling.
struct CapsuleSpec {
  int label = 0;
  int joint = 0;
  double radius = 0.0;
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  LimbGroup group = LimbGroup::Torso;  // length multiplier applied to a and b
};

/// Skeleton, joint limits and labeled capsule partition: everything that
/// defines a body independently of a particular character's proportions.
struct BodyDefinition {
  Skeleton skeleton;
  std::vector<JointLimit> limits;  // one per joint
  std::vector<PartInfo> parts;     // indexed by label - 1
  std::vector<CapsuleSpec> capsules;

  int joint_count() const { return skeleton.size(); }
  int label_count() const { return static_cast<int>(parts.size()); }

  /// Label of the mirror-image part (same label for center parts).
  int mirror_label(int label) const;
  /// Joint whose name swaps the l_/r_ prefix (itself for center joints).
  int mirror_joint(int joint) const;

  void validate() const;
};

/// Parses the three plain-text tables (formats documented in data/).
BodyDefinition parse_body_definition(std::string_view skeleton_table, std::string_view limits_table,
                                     std::string_view partition_table);
BodyDefinition load_body_definition(const std::string& skeleton_path, const std::string& limits_path,
                                    const std::string& partition_path);

/// The built-in 21-joint, 43-label body compiled from data/.
std::shared_ptr<const BodyDefinition> default_body();

struct ShapeScale {
  double torso = 1.0;
  double head = 1.0;
  double arm = 1.0;
  double leg = 1.0;
  double girth = 1.0;  // scales capsule radii

  double length(LimbGroup g) const;
  bool operator==(const ShapeScale&) const = default;
};

struct Character {
  std::uint16_t id = 0;
  std::shared_ptr<const BodyDefinition> body;
  ShapeScale shape;
  /// Radius inflation applied to depth rendering only, in [1.0, 1.1].
  double clothing_factor = 1.0;
};

enum class PostureTag : std::uint8_t { WalkRun, General };

struct Posture {
  std::uint32_t id = 0;
  PostureTag tag = PostureTag::General;
  std::vector<Vec3> rotations;  // local axis-angle per joint
};

Posture identity_posture(int joint_count, std::uint32_t id = 0);

/// Joint positions in the character frame; the root sits at the origin.
/// Throws JointCountMismatch.
std::vector<Vec3> forward_kinematics(const Skeleton& skeleton, const Posture& posture,
                                     const ShapeScale& shape = {});

struct PosedCapsule {
  int label = 0;
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 0.0;
};

struct PosedGeometry {
  std::vector<PosedCapsule> capsules;
  std::vector<Vec3> joint_positions;

  Vec3 centroid() const;
};

PosedGeometry pose_character(const Character& character, const Posture& posture);

struct PoolSpec {
  PostureTag tag = PostureTag::General;
  std::shared_ptr<const BodyDefinition> body;
  /// Stddev of the per-component noise added to walk/run gait postures.
  double gait_noise = 0.05;
};

/// Deterministic in the seed. Walk/run postures come from a parametric gait
/// cycle with small noise; general postures draw every component uniformly
/// within the joint limits.
Posture sample_posture(const PoolSpec& spec, std::uint64_t seed);

/// Noise-free gait posture. `phase` in radians; `intensity` 0 walks, 1 runs.
Posture gait_posture(const BodyDefinition& body, double phase, double intensity);

/// Mirror image of a posture through the sagittal (x = 0) plane.
Posture mirror_posture(const BodyDefinition& body, const Posture& posture);

std::vector<Vec3> clamp_to_limits(std::span<const JointLimit> limits, std::vector<Vec3> rotations);

enum class Stage : std::uint8_t { Easy = 0, Inter = 1, Hard = 2 };

const char* to_string(Stage stage);
/// Throws InvalidStage.
Stage parse_stage(std::string_view name);

/// Easy and Inter use the single canonical character (id 0); Hard draws 16
/// characters (ids 1..16) with per-group scales in [0.85, 1.20].
std::vector<Character> build_character_pool(Stage stage, std::uint64_t seed);

Character canonical_character();

}  // namespace mvdp
