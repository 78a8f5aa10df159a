#include "mvdp/synth_renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "mvdp/bytes.hpp"
#include "mvdp/error.hpp"
#include "mvdp/parallel.hpp"
#include "mvdp/random.hpp"

namespace mvdp {

std::uint8_t quantize_depth(double z) {
  const double level = std::round(kMaxDepthLevel * (z - kDepthMin) / (kDepthMax - kDepthMin));
  return static_cast<std::uint8_t>(std::clamp(level, 0.0, static_cast<double>(kMaxDepthLevel)));
}

double dequantize_depth(std::uint8_t level) { return kDepthMin + level * kQuantizationStep; }

std::size_t DepthFrame::foreground_count() const {
  return static_cast<std::size_t>(std::count_if(levels.begin(), levels.end(), [](auto l) { return l != kBackgroundLevel; }));
}

void CameraRange::validate() const {
  intrinsics.validate();
  if (!(distance_min > 0.0) || distance_min > distance_max || !(distance_max < kDepthMax)) {
    throw Error(ErrorCode::InvalidArgument, "camera distance interval must lie in (0, 8) m");
  }
  if (azimuth_min < -std::numbers::pi || azimuth_max > std::numbers::pi || azimuth_min > azimuth_max) {
    throw Error(ErrorCode::InvalidArgument, "azimuth interval must lie in [-pi, pi)");
  }
  if (elevation_min > elevation_max || std::abs(elevation_min) >= 0.5 * std::numbers::pi ||
      std::abs(elevation_max) >= 0.5 * std::numbers::pi) {
    throw Error(ErrorCode::InvalidArgument, "elevation interval must lie in (-pi/2, pi/2)");
  }
  if (target_jitter < 0.0) throw Error(ErrorCode::InvalidArgument, "negative target jitter");
}

CameraParams sample_camera(const CameraRange& range, std::uint64_t seed) {
  Rng rng(seed);
  const double azimuth = rng.uniform(range.azimuth_min, range.azimuth_max);
  const double elevation = rng.uniform(range.elevation_min, range.elevation_max);
  const double distance = rng.uniform(range.distance_min, range.distance_max);
  Vec3 jitter;
  for (int k = 0; k < 3; ++k) jitter[k] = rng.uniform(-range.target_jitter, range.target_jitter);

  const Vec3 eye = range.center + distance * Vec3(std::cos(elevation) * std::sin(azimuth), std::sin(elevation),
                                                  std::cos(elevation) * std::cos(azimuth));
  CameraParams cam;
  cam.intrinsics = range.intrinsics;
  cam.camera_to_world = look_at(eye, range.center + jitter);
  return cam;
}

namespace {

double intersect_sphere(const Vec3& origin, const Vec3& dir, double dd, const Vec3& center, double radius) {
  const Vec3 oc = origin - center;
  const double b = dir.dot(oc);
  const double c = oc.squaredNorm() - radius * radius;
  const double h = b * b - dd * c;
  if (h < 0.0) return -1.0;
  return (-b - std::sqrt(h)) / dd;
}

}  // namespace

double intersect_capsule(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, double radius) {
  const double dd = dir.squaredNorm();
  double best = std::numeric_limits<double>::infinity();
  auto keep = [&](double t) {
    if (t > 0.0 && t < best) best = t;
  };

  const Vec3 ba = b - a;
  const Vec3 oa = origin - a;
  const double baba = ba.squaredNorm();
  if (baba > 1e-18) {
    const double bard = ba.dot(dir);
    const double baoa = ba.dot(oa);
    const double qa = baba * dd - bard * bard;
    const double qb = baba * dir.dot(oa) - baoa * bard;
    const double qc = baba * oa.squaredNorm() - baoa * baoa - radius * radius * baba;
    const double h = qb * qb - qa * qc;
    if (qa > 1e-18 && h >= 0.0) {
      const double t = (-qb - std::sqrt(h)) / qa;
      const double y = baoa + t * bard;
      if (y > 0.0 && y < baba) keep(t);
    }
    keep(intersect_sphere(origin, dir, dd, b, radius));
  }
  keep(intersect_sphere(origin, dir, dd, a, radius));
  return std::isfinite(best) ? best : -1.0;
}

RenderedView render(const PosedGeometry& geometry, const CameraParams& cam, double clothing_factor,
                    const RenderOptions& options) {
  cam.validate();
  const auto& k = cam.intrinsics;
  RenderedView view{DepthFrame(k.width, k.height), LabelFrame(k.width, k.height), cam};

  std::vector<double> zbuf(static_cast<std::size_t>(k.width) * k.height, std::numeric_limits<double>::infinity());
  const Vec3 origin = Vec3::Zero();

  for (const auto& cap : geometry.capsules) {
    const Vec3 a = cam.camera_to_world.apply_inverse(cap.a);
    const Vec3 b = cam.camera_to_world.apply_inverse(cap.b);
    const double r = cap.radius * clothing_factor;

    // Conservative screen-space box from the capsule's bounding sphere.
    const Vec3 m = 0.5 * (a + b);
    const double bound = 0.5 * (b - a).norm() + r;
    int x0 = 0, x1 = k.width - 1, y0 = 0, y1 = k.height - 1;
    if (m.z() + bound <= 0.0) continue;  // entirely behind the camera
    if (m.z() - bound > 1e-6) {
      const double zn = m.z() - bound;
      const double zf = m.z() + bound;
      const double ux0 = std::min((m.x() - bound) / zn, (m.x() - bound) / zf);
      const double ux1 = std::max((m.x() + bound) / zn, (m.x() + bound) / zf);
      const double uy0 = std::min((m.y() - bound) / zn, (m.y() - bound) / zf);
      const double uy1 = std::max((m.y() + bound) / zn, (m.y() + bound) / zf);
      x0 = std::max(x0, static_cast<int>(std::floor(k.focal_x * ux0 + k.principal_x)));
      x1 = std::min(x1, static_cast<int>(std::ceil(k.focal_x * ux1 + k.principal_x)));
      y0 = std::max(y0, static_cast<int>(std::floor(k.focal_y * uy0 + k.principal_y)));
      y1 = std::min(y1, static_cast<int>(std::ceil(k.focal_y * uy1 + k.principal_y)));
    }
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec3 dir((x - k.principal_x) / k.focal_x, (y - k.principal_y) / k.focal_y, 1.0);
        const double t = intersect_capsule(origin, dir, a, b, r);
        if (t <= 0.0) continue;
        const std::size_t i = static_cast<std::size_t>(y) * k.width + x;
        if (t < zbuf[i]) {
          zbuf[i] = t;
          view.labels.labels[i] = static_cast<std::uint8_t>(cap.label);
        }
      }
    }
  }

  Rng noise(options.noise_seed);
  for (std::size_t i = 0; i < zbuf.size(); ++i) {
    if (!std::isfinite(zbuf[i])) continue;
    double z = zbuf[i];  // the ray direction has unit z, so t is camera-space depth
    if (options.depth_noise_sigma > 0.0) z += noise.normal(0.0, options.depth_noise_sigma);
    view.depth.levels[i] = quantize_depth(z);
  }
  return view;
}

const char* to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "validation" || name == "val") return Split::Validation;
  if (name == "test") return Split::Test;
  throw Error(ErrorCode::InvalidArgument, "unknown split '" + std::string(name) + "'");
}

PostureTag PosturePool::tag_of(std::uint32_t id) const {
  return id < walk_count ? PostureTag::WalkRun : PostureTag::General;
}

Posture PosturePool::posture(std::uint32_t id) const {
  if (id >= walk_count + general_count) throw Error(ErrorCode::InvalidArgument, "posture id out of range");
  PoolSpec spec;
  spec.tag = tag_of(id);
  spec.body = body;
  Posture p = sample_posture(spec, derive_seed(seed, id));
  p.id = id;
  return p;
}

namespace {

Split split_in_range(std::uint32_t local, std::uint32_t count) {
  const std::uint64_t train_end = static_cast<std::uint64_t>(count) * 8 / 10;
  const std::uint64_t val_end = static_cast<std::uint64_t>(count) * 9 / 10;
  if (local < train_end) return Split::Train;
  if (local < val_end) return Split::Validation;
  return Split::Test;
}

}  // namespace

Split PosturePool::split_of(std::uint32_t id) const {
  return id < walk_count ? split_in_range(id, walk_count) : split_in_range(id - walk_count, general_count);
}

std::vector<std::uint32_t> PosturePool::ids(Split split, bool walk_only) const {
  std::vector<std::uint32_t> out;
  const std::uint32_t end = walk_only ? walk_count : walk_count + general_count;
  for (std::uint32_t id = 0; id < end; ++id) {
    if (split_of(id) == split) out.push_back(id);
  }
  return out;
}

Sample sample(std::span<const Character> characters, const CameraRange& range, const PosturePool& postures,
              std::span<const std::uint32_t> posture_ids, int n_cameras, std::uint64_t seed,
              const RenderOptions& options) {
  if (characters.empty()) throw Error(ErrorCode::EmptyPool, "no characters");
  if (posture_ids.empty()) throw Error(ErrorCode::EmptyPool, "no postures");
  if (n_cameras < 1) throw Error(ErrorCode::InvalidArgument, "need at least one camera");

  Rng rng(seed);
  const Character& c = characters[rng.index(characters.size())];
  const std::uint64_t camera_seed = rng.engine()();
  std::vector<CameraParams> cams;
  for (int i = 0; i < n_cameras; ++i) cams.push_back(sample_camera(range, derive_seed(camera_seed, i)));
  const std::uint32_t pid = posture_ids[rng.index(posture_ids.size())];
  const std::uint64_t noise_seed = rng.engine()() ^ options.noise_seed;

  const PosedGeometry geometry = pose_character(c, postures.posture(pid));
  Sample s;
  s.posture_id = pid;
  s.character_id = c.id;
  s.joints = geometry.joint_positions;
  for (int i = 0; i < n_cameras; ++i) {
    RenderOptions o = options;
    o.noise_seed = derive_seed(noise_seed, i);
    s.views.push_back(render(geometry, cams[static_cast<std::size_t>(i)], c.clothing_factor, o));
  }
  return s;
}

std::vector<Sample> render_walk_sequence(const Character& character, const CameraRange& range, int n_cameras,
                                         int length, double phase_step, std::uint64_t seed,
                                         const RenderOptions& options) {
  Rng rng(seed);
  const std::uint64_t camera_seed = rng.engine()();
  std::vector<CameraParams> cams;
  for (int i = 0; i < n_cameras; ++i) cams.push_back(sample_camera(range, derive_seed(camera_seed, i)));
  const double phase0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double intensity = rng.uniform(0.0, 0.6);
  const std::uint64_t noise_seed = rng.engine()() ^ options.noise_seed;

  std::vector<Sample> frames(static_cast<std::size_t>(length));
  for (int f = 0; f < length; ++f) {
    const Posture p = gait_posture(*character.body, phase0 + f * phase_step, intensity);
    const PosedGeometry geometry = pose_character(character, p);
    Sample& s = frames[static_cast<std::size_t>(f)];
    s.posture_id = static_cast<std::uint32_t>(f);
    s.character_id = character.id;
    s.joints = geometry.joint_positions;
    for (int i = 0; i < n_cameras; ++i) {
      RenderOptions o = options;
      o.noise_seed = derive_seed(noise_seed, static_cast<std::uint64_t>(f) * 64 + i);
      s.views.push_back(render(geometry, cams[static_cast<std::size_t>(i)], character.clothing_factor, o));
    }
  }
  return frames;
}

DatasetConfig DatasetConfig::with_resolution(int size) {
  DatasetConfig c;
  c.range.intrinsics = CameraIntrinsics::from_fov(size, size, 70.0 * std::numbers::pi / 180.0);
  return c;
}

std::filesystem::path dataset_path(const std::filesystem::path& dir, Stage stage, Split split) {
  return dir / (std::string(to_string(stage)) + "_" + to_string(split) + ".mvds");
}

std::filesystem::path manifest_path(const std::filesystem::path& container) {
  auto p = container;
  p.replace_extension(".manifest");
  return p;
}

namespace {

std::string format_ranges(const std::set<std::uint32_t>& ids) {
  std::ostringstream out;
  bool first = true;
  for (auto it = ids.begin(); it != ids.end();) {
    const std::uint32_t lo = *it;
    std::uint32_t hi = lo;
    ++it;
    while (it != ids.end() && *it == hi + 1) hi = *it++;
    out << (first ? "" : ",") << lo;
    if (hi != lo) out << '-' << hi;
    first = false;
  }
  return out.str();
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> parse_ranges(const std::string& text) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    const auto lo = static_cast<std::uint32_t>(std::stoul(item.substr(0, dash)));
    const auto hi = dash == std::string::npos ? lo : static_cast<std::uint32_t>(std::stoul(item.substr(dash + 1)));
    out.emplace_back(lo, hi);
  }
  return out;
}

}  // namespace

void DatasetManifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  std::ostringstream ranges;
  for (std::size_t i = 0; i < posture_ranges.size(); ++i) {
    ranges << (i ? "," : "") << posture_ranges[i].first << '-' << posture_ranges[i].second;
  }
  out << "format=MVDS\n"
      << "version=1\n"
      << "stage=" << to_string(stage) << '\n'
      << "split=" << to_string(split) << '\n'
      << "sample_count=" << sample_count << '\n'
      << "n_cameras=" << n_cameras << '\n'
      << "seed=" << seed << '\n'
      << "width=" << width << '\n'
      << "height=" << height << '\n'
      << "n_joints=" << n_joints << '\n'
      << "n_labels=" << n_labels << '\n'
      << "sequence_length=" << sequence_length << '\n'
      << "posture_ranges=" << ranges.str() << '\n'
      << "distinct_postures=" << posture_ids.size() << '\n'
      << "posture_ids=" << format_ranges(posture_ids) << '\n'
      << "container=" << container_path.filename().string() << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

DatasetManifest DatasetManifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  DatasetManifest m;
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "stage") m.stage = parse_stage(value);
    else if (key == "split") m.split = parse_split(value);
    else if (key == "sample_count") m.sample_count = static_cast<std::uint32_t>(std::stoul(value));
    else if (key == "n_cameras") m.n_cameras = std::stoi(value);
    else if (key == "seed") m.seed = std::stoull(value);
    else if (key == "width") m.width = std::stoi(value);
    else if (key == "height") m.height = std::stoi(value);
    else if (key == "n_joints") m.n_joints = std::stoi(value);
    else if (key == "n_labels") m.n_labels = std::stoi(value);
    else if (key == "sequence_length") m.sequence_length = std::stoi(value);
    else if (key == "posture_ranges") m.posture_ranges = parse_ranges(value);
    else if (key == "posture_ids") {
      for (const auto& [lo, hi] : parse_ranges(value)) {
        for (std::uint32_t id = lo; id <= hi; ++id) m.posture_ids.insert(id);
      }
    } else if (key == "container") m.container_path = path.parent_path() / value;
  }
  return m;
}

DatasetManifest generate_dataset(Stage stage, Split split, std::uint32_t count, int n_cameras,
                                 const std::filesystem::path& out_dir, std::uint64_t seed,
                                 const DatasetConfig& config) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "count must be at least 1");
  if (n_cameras < 1 || n_cameras > 255) throw Error(ErrorCode::InvalidArgument, "camera count must be in 1..255");
  config.range.validate();

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  const auto characters = build_character_pool(stage, config.character_seed);
  const auto& body = *characters.front().body;
  const bool walk_only = stage == Stage::Easy;
  const auto ids = config.postures.ids(split, walk_only);

  DatasetManifest manifest;
  manifest.stage = stage;
  manifest.split = split;
  manifest.sample_count = count;
  manifest.n_cameras = n_cameras;
  manifest.seed = seed;
  manifest.width = config.range.intrinsics.width;
  manifest.height = config.range.intrinsics.height;
  manifest.n_joints = body.joint_count();
  manifest.n_labels = body.label_count();
  manifest.sequence_length = config.sequence_length;
  manifest.container_path = dataset_path(out_dir, stage, split);
  if (config.sequence_length == 0) {
    // ids() is ascending, so contiguous runs collapse into ranges.
    std::set<std::uint32_t> all(ids.begin(), ids.end());
    for (auto it = all.begin(); it != all.end();) {
      const std::uint32_t lo = *it;
      std::uint32_t hi = lo;
      ++it;
      while (it != all.end() && *it == hi + 1) hi = *it++;
      manifest.posture_ranges.emplace_back(lo, hi);
    }
  }

  ContainerHeader header;
  header.stage = stage;
  header.n_cameras = static_cast<std::uint8_t>(n_cameras);
  header.width = static_cast<std::uint16_t>(manifest.width);
  header.height = static_cast<std::uint16_t>(manifest.height);
  header.n_joints = static_cast<std::uint16_t>(manifest.n_joints);
  header.n_labels = static_cast<std::uint16_t>(manifest.n_labels);
  DatasetWriter writer(manifest.container_path, header);

  // Per-sample seeds make the output independent of how work is scheduled.
  constexpr std::uint32_t kBatch = 64;
  if (config.sequence_length > 0) {
    const auto L = static_cast<std::uint32_t>(config.sequence_length);
    const std::uint32_t sequences = (count + L - 1) / L;
    std::uint32_t remaining = count;
    for (std::uint32_t s = 0; s < sequences; ++s) {
      Rng pick(derive_seed(seed, s));
      const Character& c = characters[pick.index(characters.size())];
      auto frames = render_walk_sequence(c, config.range, n_cameras, config.sequence_length,
                                         config.sequence_phase_step, pick.engine()(), config.render);
      for (std::uint32_t f = 0; f < L && remaining > 0; ++f, --remaining) {
        frames[f].posture_id = s;  // sequence index; frame order is the record order
        writer.append(frames[f]);
        manifest.posture_ids.insert(s);
      }
    }
  } else {
    if (ids.empty()) throw Error(ErrorCode::EmptyPool, "no postures in split");
    std::vector<Sample> batch;
    for (std::uint32_t begin = 0; begin < count; begin += kBatch) {
      const std::uint32_t n = std::min(kBatch, count - begin);
      batch.assign(n, Sample{});
      parallel_for(n, [&](std::size_t i) {
        batch[i] = sample(characters, config.range, config.postures, ids, n_cameras,
                          derive_seed(seed, begin + i), config.render);
      });
      for (const auto& s : batch) {
        writer.append(s);
        manifest.posture_ids.insert(s.posture_id);
      }
    }
  }
  writer.finish();
  manifest.write(manifest_path(manifest.container_path));
  return manifest;
}

// ---------------------------------------------------------------------------
// Container I/O

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'V', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 1 + 1 + 2 + 2 + 2 + 2 + 4;

void write_header(std::ostream& out, const ContainerHeader& h) {
  detail::ByteSink s;
  for (char c : kMagic) s.u8(static_cast<std::uint8_t>(c));
  s.u32(kVersion);
  s.u8(static_cast<std::uint8_t>(h.stage));
  s.u8(h.n_cameras);
  s.u16(h.width);
  s.u16(h.height);
  s.u16(h.n_joints);
  s.u16(h.n_labels);
  s.u32(h.sample_count);
  out.write(reinterpret_cast<const char*>(s.bytes().data()), static_cast<std::streamsize>(s.bytes().size()));
}

}  // namespace

std::size_t ContainerHeader::record_size() const {
  const std::size_t frame = static_cast<std::size_t>(width) * height;
  return 4 + 2 + n_cameras * (4 * 8 + 2 * 2 + 12 * 8 + 2 * frame) + 8 * 3 * static_cast<std::size_t>(n_joints);
}

DatasetWriter::DatasetWriter(const std::filesystem::path& path, ContainerHeader header)
    : path_(path), header_(header), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  header_.sample_count = 0;
  write_header(out_, header_);
}

DatasetWriter::~DatasetWriter() {
  if (!finished_) {
    try {
      finish();
    } catch (...) {
    }
  }
}

void DatasetWriter::append(const Sample& s) {
  if (s.views.size() != header_.n_cameras || s.joints.size() != header_.n_joints) {
    throw Error(ErrorCode::ShapeMismatch, "sample does not match the container header");
  }
  detail::ByteSink sink;
  sink.u32(s.posture_id);
  sink.u16(s.character_id);
  for (const auto& v : s.views) {
    const auto& k = v.camera.intrinsics;
    if (k.width != header_.width || k.height != header_.height) {
      throw Error(ErrorCode::ShapeMismatch, "view resolution does not match the container header");
    }
    sink.f64(k.focal_x);
    sink.f64(k.focal_y);
    sink.f64(k.principal_x);
    sink.f64(k.principal_y);
    sink.u16(static_cast<std::uint16_t>(k.width));
    sink.u16(static_cast<std::uint16_t>(k.height));
    const auto& t = v.camera.camera_to_world;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) sink.f64(t.rotation(r, c));
      sink.f64(t.translation[r]);
    }
    sink.raw(v.depth.levels.data(), v.depth.levels.size());
    sink.raw(v.labels.labels.data(), v.labels.labels.size());
  }
  for (const auto& j : s.joints) {
    sink.f64(j.x());
    sink.f64(j.y());
    sink.f64(j.z());
  }
  out_.write(reinterpret_cast<const char*>(sink.bytes().data()), static_cast<std::streamsize>(sink.bytes().size()));
  if (!out_) throw Error(ErrorCode::IoFailure, "write failed for " + path_.string());
  ++written_;
}

void DatasetWriter::finish() {
  finished_ = true;
  header_.sample_count = written_;
  out_.seekp(0);
  write_header(out_, header_);
  out_.close();
  if (!out_) throw Error(ErrorCode::IoFailure, "cannot finalize " + path_.string());
}

DatasetReader::DatasetReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> raw(kHeaderBytes);
  in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in_) throw Error(ErrorCode::FormatError, "short header in " + path.string());
  detail::ByteSource src(raw);
  for (char c : kMagic) {
    if (src.u8() != static_cast<std::uint8_t>(c)) throw Error(ErrorCode::FormatError, "bad magic in " + path.string());
  }
  if (const auto v = src.u32(); v != kVersion) {
    throw Error(ErrorCode::FormatError, "unsupported container version " + std::to_string(v));
  }
  const auto stage = src.u8();
  if (stage > 2) throw Error(ErrorCode::FormatError, "bad stage code");
  header_.stage = static_cast<Stage>(stage);
  header_.n_cameras = src.u8();
  header_.width = src.u16();
  header_.height = src.u16();
  header_.n_joints = src.u16();
  header_.n_labels = src.u16();
  header_.sample_count = src.u32();
  data_offset_ = static_cast<std::streamoff>(kHeaderBytes);

  in_.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::size_t>(in_.tellg());
  if (file_size != kHeaderBytes + header_.record_size() * header_.sample_count) {
    throw Error(ErrorCode::FormatError, "container size does not match its header: " + path.string());
  }
}

Sample DatasetReader::read(std::size_t index) {
  if (index >= size()) throw Error(ErrorCode::InvalidArgument, "sample index out of range");
  const std::size_t rec = header_.record_size();
  std::vector<std::uint8_t> raw(rec);
  in_.clear();
  in_.seekg(data_offset_ + static_cast<std::streamoff>(rec * index));
  in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(rec));
  if (!in_) throw Error(ErrorCode::IoFailure, "read failed for " + path_.string());

  detail::ByteSource src(raw);
  Sample s;
  s.posture_id = src.u32();
  s.character_id = src.u16();
  for (int c = 0; c < header_.n_cameras; ++c) {
    RenderedView v;
    auto& k = v.camera.intrinsics;
    k.focal_x = src.f64();
    k.focal_y = src.f64();
    k.principal_x = src.f64();
    k.principal_y = src.f64();
    k.width = src.u16();
    k.height = src.u16();
    auto& t = v.camera.camera_to_world;
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 3; ++col) t.rotation(r, col) = src.f64();
      t.translation[r] = src.f64();
    }
    v.depth = DepthFrame(header_.width, header_.height);
    v.labels = LabelFrame(header_.width, header_.height);
    src.raw(v.depth.levels.data(), v.depth.levels.size());
    src.raw(v.labels.labels.data(), v.labels.labels.size());
    s.views.push_back(std::move(v));
  }
  s.joints.resize(header_.n_joints);
  for (auto& j : s.joints) {
    const double x = src.f64();
    const double y = src.f64();
    const double z = src.f64();
    j = Vec3(x, y, z);
  }
  return s;
}

}  // namespace mvdp
