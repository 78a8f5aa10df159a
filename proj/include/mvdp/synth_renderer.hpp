#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mvdp/body_model.hpp"
#include "mvdp/geometry.hpp"

namespace mvdp {

// Depth quantization: [0.5, 8.0] m maps linearly onto levels 0..254; level
// 255 marks background / no return.
inline constexpr double kDepthMin = 0.5;
inline constexpr double kDepthMax = 8.0;
inline constexpr std::uint8_t kMaxDepthLevel = 254;
inline constexpr std::uint8_t kBackgroundLevel = 255;
inline constexpr double kQuantizationStep = (kDepthMax - kDepthMin) / kMaxDepthLevel;

std::uint8_t quantize_depth(double z);
double dequantize_depth(std::uint8_t level);

struct DepthFrame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> levels;  // row-major, kBackgroundLevel = no return

  DepthFrame() = default;
  DepthFrame(int w, int h) : width(w), height(h), levels(static_cast<std::size_t>(w) * h, kBackgroundLevel) {}
  std::uint8_t at(int x, int y) const { return levels[static_cast<std::size_t>(y) * width + x]; }
  bool is_foreground(int x, int y) const { return at(x, y) != kBackgroundLevel; }
  std::size_t foreground_count() const;
};

struct LabelFrame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;  // row-major, 0 = background

  LabelFrame() = default;
  LabelFrame(int w, int h) : width(w), height(h), labels(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

struct CameraRange {
  double azimuth_min = -std::numbers::pi;
  double azimuth_max = std::numbers::pi;  // exclusive
  double elevation_min = -15.0 * std::numbers::pi / 180.0;
  double elevation_max = 30.0 * std::numbers::pi / 180.0;
  double distance_min = 1.5;
  double distance_max = 4.0;
  Vec3 center = Vec3(0.0, -0.1, 0.0);  // character-frame look-at point
  double target_jitter = 0.1;          // half-width of the uniform jitter cube, meters
  CameraIntrinsics intrinsics = CameraIntrinsics::from_fov(128, 128, 70.0 * std::numbers::pi / 180.0);

  void validate() const;
};

/// Camera at a uniformly drawn (azimuth, elevation, distance) around
/// `center`, looking at a jittered center. Deterministic in the seed.
CameraParams sample_camera(const CameraRange& range, std::uint64_t seed);

struct RenderOptions {
  double depth_noise_sigma = 0.0;  // additive Gaussian, meters
  std::uint64_t noise_seed = 0;
};

struct RenderedView {
  DepthFrame depth;
  LabelFrame labels;
  CameraParams camera;
};

/// Analytic ray-capsule raycast. Depth uses radii inflated by
/// `clothing_factor`; the label is that of the nearest hit capsule.
RenderedView render(const PosedGeometry& geometry, const CameraParams& cam, double clothing_factor,
                    const RenderOptions& options = {});

/// Nearest positive ray parameter of origin + t * dir against a capsule, or
/// a negative value on a miss.
double intersect_capsule(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, double radius);

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };
const char* to_string(Split split);
Split parse_split(std::string_view name);

/// Posture ids 0..walk_count-1 are walk/run postures, the following
/// general_count ids are general postures. Each tag range is cut 80/10/10
/// into train/validation/test, so splits never share a posture.
struct PosturePool {
  std::uint32_t walk_count = 10000;
  std::uint32_t general_count = 90000;
  std::uint64_t seed = 0x5EED;
  std::shared_ptr<const BodyDefinition> body = default_body();

  PostureTag tag_of(std::uint32_t id) const;
  Posture posture(std::uint32_t id) const;
  Split split_of(std::uint32_t id) const;
  /// Ids of a split, optionally restricted to walk/run postures.
  std::vector<std::uint32_t> ids(Split split, bool walk_only) const;
};

struct Sample {
  std::vector<RenderedView> views;
  std::uint32_t posture_id = 0;
  std::uint16_t character_id = 0;
  std::vector<Vec3> joints;  // world (character) frame, meters
};

/// One draw of character, n cameras and posture, rendered from every camera.
/// Throws EmptyPool.
Sample sample(std::span<const Character> characters, const CameraRange& range, const PosturePool& postures,
              std::span<const std::uint32_t> posture_ids, int n_cameras, std::uint64_t seed,
              const RenderOptions& options = {});

struct DatasetConfig {
  CameraRange range;
  PosturePool postures;
  std::uint64_t character_seed = 0xC0FFEE;
  RenderOptions render;
  /// Frames per sequence; 0 draws independent samples. Sequences keep the
  /// character and cameras fixed and advance a gait phase every frame.
  int sequence_length = 0;
  double sequence_phase_step = 2.0 * std::numbers::pi / 33.0;

  static DatasetConfig with_resolution(int size);
};

struct DatasetManifest {
  Stage stage = Stage::Easy;
  Split split = Split::Train;
  std::uint32_t sample_count = 0;
  int n_cameras = 0;
  std::uint64_t seed = 0;
  int width = 0;
  int height = 0;
  int n_joints = 0;
  int n_labels = 0;
  int sequence_length = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> posture_ranges;  // [first, last] inclusive
  std::set<std::uint32_t> posture_ids;                                  // ids actually drawn
  std::filesystem::path container_path;

  void write(const std::filesystem::path& path) const;
  static DatasetManifest read(const std::filesystem::path& path);
};

std::filesystem::path dataset_path(const std::filesystem::path& dir, Stage stage, Split split);
std::filesystem::path manifest_path(const std::filesystem::path& container);

/// Writes `<dir>/<stage>_<split>.mvds` plus its manifest. Throws IoFailure or
/// InvalidArgument.
DatasetManifest generate_dataset(Stage stage, Split split, std::uint32_t count, int n_cameras,
                                 const std::filesystem::path& out_dir, std::uint64_t seed,
                                 const DatasetConfig& config = {});

/// In-memory gait sequence of `length` frames with fixed cameras.
std::vector<Sample> render_walk_sequence(const Character& character, const CameraRange& range, int n_cameras,
                                         int length, double phase_step, std::uint64_t seed,
                                         const RenderOptions& options = {});

// Container "MVDS" v1, little-endian: magic, u32 version, header
// {u8 stage, u8 n_cameras, u16 width, u16 height, u16 n_joints, u16 n_labels,
// u32 sample_count}, then fixed-size sample records.
struct ContainerHeader {
  Stage stage = Stage::Easy;
  std::uint8_t n_cameras = 0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint16_t n_joints = 0;
  std::uint16_t n_labels = 0;
  std::uint32_t sample_count = 0;

  std::size_t record_size() const;
};

class DatasetWriter {
 public:
  DatasetWriter(const std::filesystem::path& path, ContainerHeader header);
  ~DatasetWriter();
  DatasetWriter(const DatasetWriter&) = delete;
  DatasetWriter& operator=(const DatasetWriter&) = delete;

  void append(const Sample& s);
  /// Patches the sample count and closes the file.
  void finish();

 private:
  std::filesystem::path path_;
  ContainerHeader header_;
  std::ofstream out_;
  std::uint32_t written_ = 0;
  bool finished_ = false;
};

class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path);

  const ContainerHeader& header() const { return header_; }
  std::size_t size() const { return header_.sample_count; }
  Sample read(std::size_t index);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  ContainerHeader header_;
  std::ifstream in_;
  std::streamoff data_offset_ = 0;
};

}  // namespace mvdp
