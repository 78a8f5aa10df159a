#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvdp/dense_classifier.hpp"
#include "mvdp/pose_regressor.hpp"
#include "mvdp/view_aggregation.hpp"

namespace mvdp {

struct JointErrorReport {
  std::vector<double> mean;    // per joint, meters
  std::vector<double> stddev;  // per joint, population std over frames
  double overall = 0.0;
  std::size_t samples = 0;
};

/// Throws CountMismatch when the sets or their joint counts differ.
JointErrorReport mean_joint_error(std::span<const PoseEstimate> predictions, std::span<const PoseEstimate> truths);

/// Fraction of joint predictions within each distance, pooled over joints
/// and frames.
struct PrecisionCurve {
  std::vector<double> thresholds;
  std::vector<double> precision;

  /// Value at the threshold closest to `t`. Throws InvalidArgument when empty.
  double at(double t) const;
};

inline constexpr double kHeadlineThreshold = 0.10;

/// 0.02 .. 0.20 m in 0.01 m steps.
std::vector<double> default_thresholds();

/// Throws CountMismatch, InvalidArgument (thresholds not ascending).
PrecisionCurve precision_at(std::span<const PoseEstimate> predictions, std::span<const PoseEstimate> truths,
                            std::span<const double> thresholds);

/// One training/evaluation frame: the fused features plus the target pose
/// expressed in the same reference frame.
struct FrameFeatures {
  FeatureVector features;
  PoseEstimate target;        // reference frame
  RigidTransform reference;   // reference pose in the world
  bool empty_cloud = false;
};

struct PipelineOptions {
  ReferenceFrame reference = ReferenceFrame::FirstCamera;  // run_experiment uses the regressor's own
  double probability_threshold = kDefaultProbabilityThreshold;
  int classes = 44;  // P + 1
};

/// classify -> fuse -> extract_features for one sample. Views without
/// foreground contribute nothing; an empty cloud gives all-absent features.
FrameFeatures frame_features(const Classifier& classifier, const Sample& sample, std::uint64_t seed,
                             const PipelineOptions& options = {});

/// Features for every sample of a container, in order (parallel over
/// samples). `limit` = 0 means all.
std::vector<FrameFeatures> container_features(const Classifier& classifier, const std::filesystem::path& container,
                                              std::uint64_t seed, const PipelineOptions& options = {},
                                              std::size_t limit = 0);

/// Cross-validation samples from feature frames of one container. Frames of
/// a sequence container share their sequence id; independent samples each
/// get their own. Ids start at `first_sequence`.
std::vector<CvSample> cv_samples(std::span<const FrameFeatures> frames, const std::filesystem::path& container,
                                 std::uint32_t first_sequence = 0);

struct RegressorFit {
  RegressorModel model;
  CvResult cv;
  std::size_t frames = 0;
  std::size_t empty_clouds = 0;
};

/// Features from every container, cross-validation over the grid, then a
/// final fit on all frames with the selected lambda and smoothing.
RegressorFit fit_pipeline_regressor(std::span<const std::filesystem::path> containers, const Classifier& classifier,
                                    const CvOptions& cv, std::uint64_t seed, const PipelineOptions& options = {},
                                    std::size_t limit_per_container = 0);

struct StageTiming {
  std::string name;
  std::vector<double> ms;  // per frame

  double total() const;
  double mean() const;
  double p95() const;
};

struct ExperimentConfig {
  std::filesystem::path container;
  const Classifier* classifier = nullptr;
  const RegressorModel* regressor = nullptr;
  bool smoothing = true;  // apply the regressor's smoothing, per sequence
  PipelineOptions pipeline;
  std::vector<double> thresholds = default_thresholds();
  std::size_t limit = 0;
  std::uint64_t seed = 1;
};

struct ExperimentReport {
  JointErrorReport errors;
  PrecisionCurve precision;
  std::optional<double> dense_accuracy;  // learned classifiers only
  std::vector<StageTiming> stages;       // load, classify, fuse, features, predict, smooth
  double wall_ms = 0.0;
  std::size_t frames = 0;
  std::size_t empty_clouds = 0;
  std::vector<PoseEstimate> predictions;  // world frame
  std::vector<PoseEstimate> truths;       // world frame
};

/// Runs the full pipeline frame by frame (sequentially, so per-stage clocks
/// add up to the wall clock). Sequence containers are smoothed per sequence.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Mean-pose baseline: predicts the mean training target for every frame.
PoseEstimate mean_pose(std::span<const PoseEstimate> targets);

void write_joint_report(const std::filesystem::path& path, const JointErrorReport& report,
                        const std::vector<std::string>& joint_names);
void write_precision_curve(const std::filesystem::path& path, const PrecisionCurve& curve);
void write_timings(const std::filesystem::path& path, std::span<const StageTiming> stages);
/// Header "frame,joint,x,y,z".
void write_predictions(const std::filesystem::path& path, std::span<const PoseEstimate> poses);
/// Throws FormatError, IoFailure.
std::vector<PoseEstimate> read_predictions(const std::filesystem::path& path);

}  // namespace mvdp
