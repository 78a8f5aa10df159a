#include "mvdp/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mvdp/error.hpp"
#include "mvdp/random.hpp"
#include "mvdp_tables.inc"

namespace mvdp {
namespace {

constexpr double kMinRadius = 0.02;
constexpr double kMaxRadius = 0.25;

std::vector<std::vector<std::string>> table_rows(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::vector<std::string> row;
    for (std::string f; fields >> f;) row.push_back(f);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

double to_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::FormatError, "not a number: '" + s + "'");
  }
}

LimbGroup parse_group(const std::string& s) {
  if (s == "torso") return LimbGroup::Torso;
  if (s == "head") return LimbGroup::Head;
  if (s == "arm") return LimbGroup::Arm;
  if (s == "leg") return LimbGroup::Leg;
  throw Error(ErrorCode::FormatError, "unknown limb group '" + s + "'");
}

Side parse_side(const std::string& s) {
  if (s == "C") return Side::Center;
  if (s == "L") return Side::Left;
  if (s == "R") return Side::Right;
  throw Error(ErrorCode::FormatError, "unknown side '" + s + "'");
}

std::string mirrored_name(const std::string& name) {
  if (name.rfind("l_", 0) == 0) return "r_" + name.substr(2);
  if (name.rfind("r_", 0) == 0) return "l_" + name.substr(2);
  if (name.size() > 2 && name.ends_with("_l")) return name.substr(0, name.size() - 2) + "_r";
  if (name.size() > 2 && name.ends_with("_r")) return name.substr(0, name.size() - 2) + "_l";
  return name;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int Skeleton::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < joints.size(); ++i) {
    if (joints[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void Skeleton::validate() const {
  if (joints.empty() || joints[0].parent != -1) {
    throw Error(ErrorCode::InvalidArgument, "joint 0 must be the root");
  }
  for (std::size_t i = 1; i < joints.size(); ++i) {
    if (joints[i].parent < 0 || joints[i].parent >= static_cast<int>(i)) {
      throw Error(ErrorCode::InvalidArgument, "joint '" + joints[i].name + "' breaks topological order");
    }
    if (joints[i].rest_offset.norm() == 0.0) {
      throw Error(ErrorCode::InvalidArgument, "joint '" + joints[i].name + "' has a zero rest offset");
    }
  }
}

int BodyDefinition::mirror_label(int label) const {
  const auto& name = parts.at(static_cast<std::size_t>(label - 1)).name;
  const auto target = mirrored_name(name);
  for (const auto& p : parts) {
    if (p.name == target) return p.label;
  }
  return label;
}

int BodyDefinition::mirror_joint(int joint) const {
  const int m = skeleton.index_of(mirrored_name(skeleton.joints.at(static_cast<std::size_t>(joint)).name));
  return m < 0 ? joint : m;
}

void BodyDefinition::validate() const {
  skeleton.validate();
  if (limits.size() != skeleton.joints.size()) {
    throw Error(ErrorCode::InvalidArgument, "joint limit table does not cover every joint");
  }
  for (const auto& l : limits) {
    if ((l.lo.array() > l.hi.array()).any()) throw Error(ErrorCode::InvalidArgument, "joint limit lo > hi");
  }
  std::vector<int> owners(parts.size(), 0);
  for (const auto& c : capsules) {
    if (c.label < 1 || c.label > label_count()) throw Error(ErrorCode::InvalidArgument, "capsule label out of range");
    if (c.joint < 0 || c.joint >= joint_count()) throw Error(ErrorCode::InvalidArgument, "capsule joint out of range");
    if (c.radius < kMinRadius || c.radius > kMaxRadius) {
      throw Error(ErrorCode::InvalidArgument, "capsule radius outside [0.02, 0.25] m");
    }
    ++owners[static_cast<std::size_t>(c.label - 1)];
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].label != static_cast<int>(i) + 1) throw Error(ErrorCode::InvalidArgument, "labels must be 1..P in order");
    if (owners[i] == 0) throw Error(ErrorCode::InvalidArgument, "label '" + parts[i].name + "' owns no capsule");
  }
  int left = 0;
  int right = 0;
  for (const auto& p : parts) {
    if (p.side == Side::Left) ++left;
    if (p.side == Side::Right) ++right;
    if (p.side != Side::Center) {
      const auto& m = parts[static_cast<std::size_t>(mirror_label(p.label) - 1)];
      if (m.label == p.label || m.side == p.side || m.side == Side::Center) {
        throw Error(ErrorCode::InvalidArgument, "part '" + p.name + "' has no opposite-side twin");
      }
    }
  }
  if (left != right) throw Error(ErrorCode::InvalidArgument, "left and right label sets differ in size");
}

BodyDefinition parse_body_definition(std::string_view skeleton_table, std::string_view limits_table,
                                     std::string_view partition_table) {
  BodyDefinition body;
  for (const auto& row : table_rows(skeleton_table)) {
    if (row.size() != 6) throw Error(ErrorCode::FormatError, "skeleton rows need 6 fields");
    JointSpec j;
    j.name = row[0];
    j.parent = row[1] == "-" ? -1 : body.skeleton.index_of(row[1]);
    if (row[1] != "-" && j.parent < 0) throw Error(ErrorCode::FormatError, "unknown parent '" + row[1] + "'");
    j.group = parse_group(row[2]);
    j.rest_offset = Vec3(to_double(row[3]), to_double(row[4]), to_double(row[5]));
    body.skeleton.joints.push_back(std::move(j));
  }

  body.limits.resize(body.skeleton.joints.size());
  std::vector<bool> seen(body.limits.size(), false);
  for (const auto& row : table_rows(limits_table)) {
    if (row.size() != 7) throw Error(ErrorCode::FormatError, "joint limit rows need 7 fields");
    const int j = body.skeleton.index_of(row[0]);
    if (j < 0) throw Error(ErrorCode::FormatError, "limit for unknown joint '" + row[0] + "'");
    auto& l = body.limits[static_cast<std::size_t>(j)];
    l.lo = Vec3(to_double(row[1]), to_double(row[3]), to_double(row[5]));
    l.hi = Vec3(to_double(row[2]), to_double(row[4]), to_double(row[6]));
    seen[static_cast<std::size_t>(j)] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw Error(ErrorCode::FormatError, "joint limit table misses a joint");
  }

  for (const auto& row : table_rows(partition_table)) {
    if (row.size() < 6) throw Error(ErrorCode::FormatError, "partition row too short");
    const int label = static_cast<int>(to_double(row[0]));
    const std::string& kind = row[3];
    const int joint = body.skeleton.index_of(row[4]);
    if (joint < 0) throw Error(ErrorCode::FormatError, "partition references unknown joint '" + row[4] + "'");
    if (label < 1) throw Error(ErrorCode::FormatError, "labels start at 1");
    if (static_cast<std::size_t>(label) > body.parts.size()) body.parts.resize(static_cast<std::size_t>(label));
    auto& part = body.parts[static_cast<std::size_t>(label - 1)];
    part.label = label;
    part.name = row[1];
    part.side = parse_side(row[2]);

    CapsuleSpec c;
    c.label = label;
    c.joint = joint;
    c.radius = to_double(row[5]);
    if (kind == "seg") {
      if (row.size() != 12) throw Error(ErrorCode::FormatError, "seg rows need 12 fields");
      c.a = Vec3(to_double(row[6]), to_double(row[7]), to_double(row[8]));
      c.b = Vec3(to_double(row[9]), to_double(row[10]), to_double(row[11]));
      c.group = body.skeleton.joints[static_cast<std::size_t>(joint)].group;
    } else if (kind == "band") {
      if (row.size() != 9) throw Error(ErrorCode::FormatError, "band rows need 9 fields");
      const int child = body.skeleton.index_of(row[6]);
      if (child < 0 || body.skeleton.joints[static_cast<std::size_t>(child)].parent != joint) {
        throw Error(ErrorCode::FormatError, "band child '" + row[6] + "' is not a child of '" + row[4] + "'");
      }
      const auto& bone = body.skeleton.joints[static_cast<std::size_t>(child)];
      c.a = to_double(row[7]) * bone.rest_offset;
      c.b = to_double(row[8]) * bone.rest_offset;
      c.group = bone.group;
    } else {
      throw Error(ErrorCode::FormatError, "unknown partition row kind '" + kind + "'");
    }
    body.capsules.push_back(c);
  }
  body.validate();
  return body;
}

BodyDefinition load_body_definition(const std::string& skeleton_path, const std::string& limits_path,
                                    const std::string& partition_path) {
  return parse_body_definition(read_file(skeleton_path), read_file(limits_path), read_file(partition_path));
}

std::shared_ptr<const BodyDefinition> default_body() {
  static const auto body = std::make_shared<const BodyDefinition>(
      parse_body_definition(tables::kSkeleton, tables::kJointLimits, tables::kPartPartition));
  return body;
}

double ShapeScale::length(LimbGroup g) const {
  switch (g) {
    case LimbGroup::Torso: return torso;
    case LimbGroup::Head: return head;
    case LimbGroup::Arm: return arm;
    case LimbGroup::Leg: return leg;
  }
  return 1.0;
}

Posture identity_posture(int joint_count, std::uint32_t id) {
  Posture p;
  p.id = id;
  p.rotations.assign(static_cast<std::size_t>(joint_count), Vec3::Zero());
  return p;
}

namespace {

struct Frames {
  std::vector<Vec3> positions;
  std::vector<Mat3> rotations;
};

Frames solve_frames(const Skeleton& skeleton, const Posture& posture, const ShapeScale& shape) {
  if (posture.rotations.size() != skeleton.joints.size()) {
    throw Error(ErrorCode::JointCountMismatch, "posture has " + std::to_string(posture.rotations.size()) +
                                                   " joints, skeleton has " + std::to_string(skeleton.size()));
  }
  const std::size_t n = skeleton.joints.size();
  Frames f;
  f.positions.resize(n);
  f.rotations.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& spec = skeleton.joints[j];
    const Mat3 local = axis_angle_to_matrix(posture.rotations[j]);
    if (spec.parent < 0) {
      f.positions[j] = Vec3::Zero();
      f.rotations[j] = local;
    } else {
      const auto p = static_cast<std::size_t>(spec.parent);
      f.positions[j] = f.positions[p] + f.rotations[p] * (shape.length(spec.group) * spec.rest_offset);
      f.rotations[j] = f.rotations[p] * local;
    }
  }
  return f;
}

}  // namespace

std::vector<Vec3> forward_kinematics(const Skeleton& skeleton, const Posture& posture, const ShapeScale& shape) {
  return solve_frames(skeleton, posture, shape).positions;
}

Vec3 PosedGeometry::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const auto& cap : capsules) c += 0.5 * (cap.a + cap.b);
  return capsules.empty() ? c : Vec3(c / static_cast<double>(capsules.size()));
}

PosedGeometry pose_character(const Character& character, const Posture& posture) {
  const auto& body = *character.body;
  const Frames f = solve_frames(body.skeleton, posture, character.shape);
  PosedGeometry g;
  g.joint_positions = f.positions;
  g.capsules.reserve(body.capsules.size());
  for (const auto& c : body.capsules) {
    const auto j = static_cast<std::size_t>(c.joint);
    const double s = character.shape.length(c.group);
    PosedCapsule pc;
    pc.label = c.label;
    pc.a = f.positions[j] + f.rotations[j] * (s * c.a);
    pc.b = f.positions[j] + f.rotations[j] * (s * c.b);
    pc.radius = std::clamp(c.radius * character.shape.girth, kMinRadius, kMaxRadius);
    g.capsules.push_back(pc);
  }
  return g;
}

std::vector<Vec3> clamp_to_limits(std::span<const JointLimit> limits, std::vector<Vec3> rotations) {
  for (std::size_t j = 0; j < rotations.size() && j < limits.size(); ++j) {
    rotations[j] = rotations[j].cwiseMax(limits[j].lo).cwiseMin(limits[j].hi);
  }
  return rotations;
}

Posture gait_posture(const BodyDefinition& body, double phase, double intensity) {
  const auto& sk = body.skeleton;
  Posture p = identity_posture(sk.size());
  p.tag = PostureTag::WalkRun;
  auto set = [&](std::string_view name, const Vec3& r) {
    if (const int j = sk.index_of(name); j >= 0) p.rotations[static_cast<std::size_t>(j)] = r;
  };
  const double s = std::clamp(intensity, 0.0, 1.0);
  const double sn = std::sin(phase);
  const double cs = std::cos(phase);

  const double hip_amp = 0.45 + 0.35 * s;
  const double knee_base = 0.10 + 0.45 * s;
  const double knee_amp = 0.55 + 0.65 * s;
  const double arm_amp = 0.30 + 0.50 * s;
  const double elbow_base = 0.20 + 1.20 * s;

  set("pelvis", Vec3(0.0, -0.08 * sn, 0.0));
  set("spine", Vec3(-0.08 * s, 0.10 * sn, 0.0));
  set("chest", Vec3(-0.08 * s, 0.05 * sn, 0.0));
  set("neck", Vec3(0.05 * s, -0.10 * sn, 0.0));

  set("l_hip", Vec3(-hip_amp * sn, 0.0, 0.05));
  set("r_hip", Vec3(hip_amp * sn, 0.0, -0.05));
  set("l_knee", Vec3(knee_base + knee_amp * std::max(0.0, cs), 0.0, 0.0));
  set("r_knee", Vec3(knee_base + knee_amp * std::max(0.0, -cs), 0.0, 0.0));
  set("l_ankle", Vec3(0.20 * sn, 0.0, 0.0));
  set("r_ankle", Vec3(-0.20 * sn, 0.0, 0.0));

  set("l_shoulder", Vec3(arm_amp * sn, 0.0, 0.10 + 0.10 * s));
  set("r_shoulder", Vec3(-arm_amp * sn, 0.0, -(0.10 + 0.10 * s)));
  set("l_elbow", Vec3(-(elbow_base + 0.20 * std::max(0.0, -sn)), 0.0, 0.0));
  set("r_elbow", Vec3(-(elbow_base + 0.20 * std::max(0.0, sn)), 0.0, 0.0));

  p.rotations = clamp_to_limits(body.limits, std::move(p.rotations));
  return p;
}

Posture sample_posture(const PoolSpec& spec, std::uint64_t seed) {
  const auto& body = spec.body ? *spec.body : *default_body();
  Rng rng(seed);
  Posture p;
  p.tag = spec.tag;
  if (spec.tag == PostureTag::WalkRun) {
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double intensity = rng.uniform01();
    p = gait_posture(body, phase, intensity);
    for (auto& r : p.rotations) {
      for (int k = 0; k < 3; ++k) r[k] += rng.normal(0.0, spec.gait_noise);
    }
    p.rotations = clamp_to_limits(body.limits, std::move(p.rotations));
  } else {
    p.rotations.resize(body.limits.size());
    for (std::size_t j = 0; j < body.limits.size(); ++j) {
      const auto& l = body.limits[j];
      for (int k = 0; k < 3; ++k) p.rotations[j][k] = l.lo[k] == l.hi[k] ? l.lo[k] : rng.uniform(l.lo[k], l.hi[k]);
    }
  }
  return p;
}

Posture mirror_posture(const BodyDefinition& body, const Posture& posture) {
  Posture m = posture;
  for (int j = 0; j < body.joint_count(); ++j) {
    const Vec3& r = posture.rotations[static_cast<std::size_t>(body.mirror_joint(j))];
    m.rotations[static_cast<std::size_t>(j)] = Vec3(r.x(), -r.y(), -r.z());
  }
  return m;
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::Easy: return "easy";
    case Stage::Inter: return "inter";
    case Stage::Hard: return "hard";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  if (name == "easy") return Stage::Easy;
  if (name == "inter") return Stage::Inter;
  if (name == "hard") return Stage::Hard;
  throw Error(ErrorCode::InvalidStage, "unknown stage '" + std::string(name) + "' (expected easy, inter or hard)");
}

Character canonical_character() {
  Character c;
  c.id = 0;
  c.body = default_body();
  c.clothing_factor = 1.05;
  return c;
}

std::vector<Character> build_character_pool(Stage stage, std::uint64_t seed) {
  if (stage != Stage::Hard) return {canonical_character()};
  std::vector<Character> pool;
  constexpr int kHardCharacters = 16;
  for (int i = 0; i < kHardCharacters; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    Character c;
    c.id = static_cast<std::uint16_t>(i + 1);
    c.body = default_body();
    c.shape.torso = rng.uniform(0.85, 1.20);
    c.shape.head = rng.uniform(0.85, 1.20);
    c.shape.arm = rng.uniform(0.85, 1.20);
    c.shape.leg = rng.uniform(0.85, 1.20);
    c.shape.girth = rng.uniform(0.85, 1.20);
    c.clothing_factor = rng.uniform(1.0, 1.1);
    pool.push_back(std::move(c));
  }
  return pool;
}

}  // namespace mvdp
