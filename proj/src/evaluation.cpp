#include "mvdp/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mvdp/error.hpp"
#include "mvdp/parallel.hpp"
#include "mvdp/random.hpp"

namespace mvdp {

namespace {

void check_aligned(std::span<const PoseEstimate> predictions, std::span<const PoseEstimate> truths) {
  if (predictions.size() != truths.size()) {
    throw Error(ErrorCode::CountMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                              std::to_string(truths.size()) + " groundtruth frames");
  }
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (predictions[i].size() != truths[i].size() || truths[i].size() != truths.front().size()) {
      throw Error(ErrorCode::CountMismatch, "joint count differs at frame " + std::to_string(i));
    }
  }
}

}  // namespace

JointErrorReport mean_joint_error(std::span<const PoseEstimate> predictions, std::span<const PoseEstimate> truths) {
  check_aligned(predictions, truths);
  JointErrorReport r;
  r.samples = truths.size();
  if (truths.empty()) return r;
  const std::size_t J = truths.front().size();
  r.mean.assign(J, 0.0);
  r.stddev.assign(J, 0.0);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    for (std::size_t j = 0; j < J; ++j) r.mean[j] += (predictions[i][j] - truths[i][j]).norm();
  }
  const auto n = static_cast<double>(truths.size());
  for (auto& m : r.mean) m /= n;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    for (std::size_t j = 0; j < J; ++j) {
      const double d = (predictions[i][j] - truths[i][j]).norm() - r.mean[j];
      r.stddev[j] += d * d;
    }
  }
  for (auto& s : r.stddev) s = std::sqrt(s / n);
  double sum = 0.0;
  for (double m : r.mean) sum += m;
  r.overall = J == 0 ? 0.0 : sum / static_cast<double>(J);
  return r;
}

double PrecisionCurve::at(double t) const {
  if (thresholds.empty()) throw Error(ErrorCode::InvalidArgument, "empty precision curve");
  std::size_t best = 0;
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (std::abs(thresholds[i] - t) < std::abs(thresholds[best] - t)) best = i;
  }
  return precision[best];
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int cm = 2; cm <= 20; ++cm) t.push_back(cm / 100.0);
  return t;
}

PrecisionCurve precision_at(std::span<const PoseEstimate> predictions, std::span<const PoseEstimate> truths,
                            std::span<const double> thresholds) {
  check_aligned(predictions, truths);
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] >= thresholds[i - 1])) throw Error(ErrorCode::InvalidArgument, "thresholds must ascend");
  }
  PrecisionCurve c;
  c.thresholds.assign(thresholds.begin(), thresholds.end());
  c.precision.assign(thresholds.size(), 0.0);
  std::vector<std::size_t> hits(thresholds.size(), 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    for (std::size_t j = 0; j < truths[i].size(); ++j) {
      const double d = (predictions[i][j] - truths[i][j]).norm();
      for (std::size_t k = 0; k < thresholds.size(); ++k) {
        if (d <= thresholds[k]) ++hits[k];
      }
      ++total;
    }
  }
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    c.precision[k] = total == 0 ? 0.0 : static_cast<double>(hits[k]) / static_cast<double>(total);
  }
  return c;
}

// ---------------------------------------------------------------------------

namespace {

struct ClassifiedViews {
  std::vector<ProbabilityMap> maps;
  std::vector<int> view_of_map;
};

ClassifiedViews classify_views(const Classifier& classifier, const Sample& sample, std::uint64_t seed) {
  ClassifiedViews out;
  for (std::size_t v = 0; v < sample.views.size(); ++v) {
    const auto& view = sample.views[v];
    if (view.depth.foreground_count() == 0) continue;
    out.maps.push_back(classifier.classify(view.depth, &view.labels, derive_seed(seed, v)));
    out.view_of_map.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<CameraParams> cameras_of(const Sample& sample) {
  std::vector<CameraParams> cams;
  for (const auto& v : sample.views) cams.push_back(v.camera);
  return cams;
}

LabeledPointCloud fuse_views(const Sample& sample, const ClassifiedViews& cv, const RigidTransform& reference,
                             double threshold) {
  std::vector<FusionView> views;
  for (std::size_t i = 0; i < cv.maps.size(); ++i) {
    const auto& v = sample.views[static_cast<std::size_t>(cv.view_of_map[i])];
    views.push_back({&cv.maps[i], &v.depth, v.camera});
  }
  if (views.empty()) return {};
  try {
    return fuse(views, reference, threshold);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoForegroundPoints) throw;
    return {};
  }
}

PoseEstimate to_frame(const PoseEstimate& p, const RigidTransform& reference, bool inverse) {
  PoseEstimate out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) out[j] = inverse ? reference.apply_inverse(p[j]) : reference.apply(p[j]);
  return out;
}

}  // namespace

FrameFeatures frame_features(const Classifier& classifier, const Sample& sample, std::uint64_t seed,
                             const PipelineOptions& options) {
  const auto cams = cameras_of(sample);
  FrameFeatures ff;
  ff.reference = reference_pose(cams, options.reference);
  const auto cv = classify_views(classifier, sample, seed);
  const auto cloud = fuse_views(sample, cv, ff.reference, options.probability_threshold);
  ff.empty_cloud = cloud.empty();
  ff.features = extract_features(cloud, options.classes - 1);
  ff.target = to_frame(sample.joints, ff.reference, true);
  return ff;
}

std::vector<FrameFeatures> container_features(const Classifier& classifier, const std::filesystem::path& container,
                                              std::uint64_t seed, const PipelineOptions& options, std::size_t limit) {
  DatasetReader reader(container);
  std::size_t count = reader.size();
  if (limit > 0) count = std::min(count, limit);
  std::vector<FrameFeatures> out(count);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t end = std::min(count, start + kChunk);
    std::vector<Sample> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(reader.read(i));
    parallel_for(batch.size(), [&](std::size_t k) {
      out[start + k] = frame_features(classifier, batch[k], derive_seed(seed, start + k), options);
    });
  }
  return out;
}

namespace {

int sequence_length_of(const std::filesystem::path& container) {
  const auto m = manifest_path(container);
  return std::filesystem::exists(m) ? DatasetManifest::read(m).sequence_length : 0;
}

}  // namespace

std::vector<CvSample> cv_samples(std::span<const FrameFeatures> frames, const std::filesystem::path& container,
                                 std::uint32_t first_sequence) {
  const int seq_len = sequence_length_of(container);
  std::vector<CvSample> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    CvSample s;
    s.features = frames[i].features;
    s.target = frames[i].target;
    if (seq_len > 0) {
      s.sequence = first_sequence + static_cast<std::uint32_t>(i / static_cast<std::size_t>(seq_len));
      s.frame = static_cast<std::uint32_t>(i % static_cast<std::size_t>(seq_len));
    } else {
      s.sequence = first_sequence + static_cast<std::uint32_t>(i);
    }
    out.push_back(std::move(s));
  }
  return out;
}

RegressorFit fit_pipeline_regressor(std::span<const std::filesystem::path> containers, const Classifier& classifier,
                                    const CvOptions& cv, std::uint64_t seed, const PipelineOptions& options,
                                    std::size_t limit_per_container) {
  if (containers.empty()) throw Error(ErrorCode::InsufficientData, "no training containers");
  RegressorFit fit;
  std::vector<CvSample> samples;
  std::uint32_t next_sequence = 0;
  for (std::size_t c = 0; c < containers.size(); ++c) {
    const auto frames =
        container_features(classifier, containers[c], derive_seed(seed, c), options, limit_per_container);
    for (const auto& f : frames) fit.empty_clouds += f.empty_cloud ? 1 : 0;
    auto part = cv_samples(frames, containers[c], next_sequence);
    for (const auto& s : part) next_sequence = std::max(next_sequence, s.sequence + 1);
    samples.insert(samples.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  fit.frames = samples.size();
  fit.cv = cross_validate(samples, cv);
  std::vector<FeatureVector> f;
  std::vector<PoseEstimate> y;
  for (const auto& s : samples) {
    f.push_back(s.features);
    y.push_back(s.target);
  }
  fit.model = train_regressor(f, y, fit.cv.lambda);
  fit.model.smoothing = fit.cv.smoothing;
  fit.model.reference = options.reference;
  return fit;
}

// ---------------------------------------------------------------------------

double StageTiming::total() const {
  double s = 0.0;
  for (double v : ms) s += v;
  return s;
}

double StageTiming::mean() const { return ms.empty() ? 0.0 : total() / static_cast<double>(ms.size()); }

double StageTiming::p95() const {
  if (ms.empty()) return 0.0;
  std::vector<double> s = ms;
  std::sort(s.begin(), s.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(s.size())));
  return s[std::max<std::size_t>(rank, 1) - 1];
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  if (config.classifier == nullptr || config.regressor == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "experiment needs a classifier and a regressor");
  }
  using Clock = std::chrono::steady_clock;
  const auto wall_start = Clock::now();
  // One running mark for the whole run: opening the container counts as
  // loading the first frame and the final metrics as scoring the last, so
  // the stage totals add up to the wall clock.
  auto mark = wall_start;

  DatasetReader reader(config.container);
  const int sequence_length = sequence_length_of(config.container);
  std::size_t count = reader.size();
  if (config.limit > 0) count = std::min(count, config.limit);

  ExperimentReport report;
  enum { kLoad, kClassify, kFuse, kFeatures, kPredict, kSmooth, kScore, kStageCount };
  static const char* kNames[kStageCount] = {"load", "classify", "fuse", "features", "predict", "smooth", "score"};
  report.stages.resize(kStageCount);
  for (int s = 0; s < kStageCount; ++s) report.stages[static_cast<std::size_t>(s)].name = kNames[s];

  const bool learned = dynamic_cast<const OracleClassifier*>(config.classifier) == nullptr;
  AccuracyAccumulator accuracy(config.classifier->classes());
  const SmoothingConfig smoothing = config.smoothing ? config.regressor->smoothing : SmoothingConfig::off();
  Smoother smoother(smoothing);
  std::uint32_t current_sequence = UINT32_MAX;

  for (std::size_t i = 0; i < count; ++i) {
    std::array<double, kStageCount> t{};
    auto lap = [&](int stage) {
      const auto now = Clock::now();
      t[static_cast<std::size_t>(stage)] += std::chrono::duration<double, std::milli>(now - mark).count();
      mark = now;
    };

    const Sample sample = reader.read(i);
    const auto cams = cameras_of(sample);
    const RigidTransform reference = reference_pose(cams, config.regressor->reference);
    lap(kLoad);

    const auto cv = classify_views(*config.classifier, sample, derive_seed(config.seed, i));
    lap(kClassify);

    const auto cloud = fuse_views(sample, cv, reference, config.pipeline.probability_threshold);
    lap(kFuse);

    const auto features = extract_features(cloud, config.pipeline.classes - 1);
    lap(kFeatures);

    const PoseEstimate world = to_frame(predict(*config.regressor, features), reference, false);
    lap(kPredict);

    const auto sequence = static_cast<std::uint32_t>(sequence_length > 0 ? i / static_cast<std::size_t>(sequence_length) : i);
    if (sequence != current_sequence) {
      smoother.reset();
      current_sequence = sequence;
    }
    report.predictions.push_back(smoother.push(world));
    lap(kSmooth);

    report.truths.push_back(sample.joints);
    if (cloud.empty()) ++report.empty_clouds;
    if (learned) {
      for (std::size_t m = 0; m < cv.maps.size(); ++m) {
        accuracy.add(cv.maps[m].argmax(), sample.views[static_cast<std::size_t>(cv.view_of_map[m])].labels);
      }
    }
    lap(kScore);
    for (int s = 0; s < kStageCount; ++s) {
      report.stages[static_cast<std::size_t>(s)].ms.push_back(t[static_cast<std::size_t>(s)]);
    }
  }
  report.frames = count;
  report.errors = mean_joint_error(report.predictions, report.truths);
  report.precision = precision_at(report.predictions, report.truths, config.thresholds);
  if (learned) report.dense_accuracy = accuracy.average();
  const auto end = Clock::now();
  if (count > 0) report.stages[kScore].ms.back() += std::chrono::duration<double, std::milli>(end - mark).count();
  report.wall_ms = std::chrono::duration<double, std::milli>(end - wall_start).count();
  return report;
}

PoseEstimate mean_pose(std::span<const PoseEstimate> targets) {
  if (targets.empty()) throw Error(ErrorCode::InsufficientData, "no targets to average");
  PoseEstimate m(targets.front().size(), Vec3::Zero());
  for (const auto& t : targets) {
    if (t.size() != m.size()) throw Error(ErrorCode::CountMismatch, "targets differ in joint count");
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += t[j];
  }
  for (auto& v : m) v /= static_cast<double>(targets.size());
  return m;
}

// ---------------------------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.precision(9);
  return out;
}

}  // namespace

void write_joint_report(const std::filesystem::path& path, const JointErrorReport& report,
                        const std::vector<std::string>& joint_names) {
  auto out = open_out(path);
  out << "joint,name,mean_error,std_error\n";
  for (std::size_t j = 0; j < report.mean.size(); ++j) {
    out << j << ',' << (j < joint_names.size() ? joint_names[j] : "") << ',' << report.mean[j] << ','
        << report.stddev[j] << '\n';
  }
  out << "all,overall," << report.overall << ",\n";
}

void write_precision_curve(const std::filesystem::path& path, const PrecisionCurve& curve) {
  auto out = open_out(path);
  out << "threshold,precision\n";
  for (std::size_t k = 0; k < curve.thresholds.size(); ++k) out << curve.thresholds[k] << ',' << curve.precision[k] << '\n';
}

void write_timings(const std::filesystem::path& path, std::span<const StageTiming> stages) {
  auto out = open_out(path);
  out << "stage,frames,mean_ms,p95_ms,total_ms\n";
  for (const auto& s : stages) out << s.name << ',' << s.ms.size() << ',' << s.mean() << ',' << s.p95() << ',' << s.total() << '\n';
}

void write_predictions(const std::filesystem::path& path, std::span<const PoseEstimate> poses) {
  auto out = open_out(path);
  out << "frame,joint,x,y,z\n";
  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (std::size_t j = 0; j < poses[i].size(); ++j) {
      const auto& p = poses[i][j];
      out << i << ',' << j << ',' << p.x() << ',' << p.y() << ',' << p.z() << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::vector<PoseEstimate> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "frame,joint,x,y,z") {
    throw Error(ErrorCode::FormatError, path.string() + ": expected header frame,joint,x,y,z");
  }
  std::vector<PoseEstimate> poses;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t frame = 0, joint = 0;
    double x = 0, y = 0, z = 0;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(ss >> frame >> c1 >> joint >> c2 >> x >> c3 >> y >> c4 >> z) || c1 != ',' || c2 != ',' || c3 != ',' ||
        c4 != ',') {
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    if (frame == poses.size()) poses.emplace_back();
    if (frame + 1 != poses.size() || joint != poses.back().size()) {
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(lineno) + ": rows out of order");
    }
    poses.back().emplace_back(x, y, z);
  }
  return poses;
}

}  // namespace mvdp
