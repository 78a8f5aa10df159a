#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mvdp/fcn.hpp"
#include "mvdp/model_io.hpp"
#include "mvdp/synth_renderer.hpp"

namespace mvdp {

inline constexpr double kTargetDepth = 1.60;

/// Margin in window pixels for an S x S window (30 px at S = 250).
int window_margin(int size);

/// A person's depth shifted to a mean of 1.60 m and rescaled (aspect
/// preserved) so the foreground bounding box fits the window minus margin.
/// Window pixel w relates to source pixel p by w = scale * p + offset.
struct NormalizedDepthImage {
  int size = 0;
  int margin = 0;
  std::vector<std::uint8_t> levels;  // size x size, row-major

  int source_width = 0;
  int source_height = 0;
  int level_shift = 0;  // quantization levels added to every foreground pixel
  double scale = 1.0;
  Vec2 offset = Vec2::Zero();
  /// Window pixel index for each source pixel; -1 for background.
  std::vector<std::int32_t> source_to_window;
  /// Source pixel index sampled by each window pixel; -1 for background.
  std::vector<std::int32_t> window_to_source;

  double depth_shift() const { return level_shift * kQuantizationStep; }
  Vec2 to_window(const Vec2& source) const { return scale * source + offset; }
  Vec2 to_source(const Vec2& window) const { return (window - offset) / scale; }
};

/// Throws EmptyForeground.
NormalizedDepthImage preprocess(const DepthFrame& depth, int size);

/// Labels resampled into the window exactly as preprocess() samples depth.
std::vector<std::uint8_t> warp_labels(const NormalizedDepthImage& img, const DepthFrame& depth,
                                      const LabelFrame& labels);

/// Network input: levels re-centered on the 1.60 m level, background
/// saturated at +3.
Tensor<float> network_input(const NormalizedDepthImage& img);

/// Per-pixel class distribution, stored pixel-major (channels innermost).
struct ProbabilityMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> values;

  ProbabilityMap() = default;
  ProbabilityMap(int w, int h, int c)
      : width(w), height(h), channels(c), values(static_cast<std::size_t>(w) * h * c, 0.0f) {}
  std::span<float> pixel(int x, int y) {
    return {values.data() + (static_cast<std::size_t>(y) * width + x) * channels, static_cast<std::size_t>(channels)};
  }
  std::span<const float> pixel(int x, int y) const {
    return {values.data() + (static_cast<std::size_t>(y) * width + x) * channels, static_cast<std::size_t>(channels)};
  }
  /// Most probable class per pixel; ties resolve to the lowest class id.
  LabelFrame argmax() const;
};

/// Softmax of the network logits at window resolution. Throws ShapeMismatch.
ProbabilityMap fcn_forward(const FcnModel& model, const NormalizedDepthImage& img);

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int classes() const = 0;
  /// Probability map in the frame's own pixel coordinates. Pixels without a
  /// depth return are pure background. `groundtruth` is consulted only by
  /// the oracle. Throws EmptyForeground.
  virtual ProbabilityMap classify(const DepthFrame& depth, const LabelFrame* groundtruth,
                                  std::uint64_t seed) const = 0;
};

/// Replays groundtruth labels as one-hot maps. With probability
/// `noise_rate` a foreground pixel's label is replaced by a uniform draw
/// from 1..classes-1.
class OracleClassifier final : public Classifier {
 public:
  explicit OracleClassifier(int classes = 44, double noise_rate = 0.0);
  int classes() const override { return classes_; }
  ProbabilityMap classify(const DepthFrame& depth, const LabelFrame* groundtruth, std::uint64_t seed) const override;

 private:
  int classes_;
  double noise_rate_;
};

class FcnClassifier final : public Classifier {
 public:
  explicit FcnClassifier(std::shared_ptr<const FcnModel> model);
  int classes() const override;
  ProbabilityMap classify(const DepthFrame& depth, const LabelFrame* groundtruth, std::uint64_t seed) const override;
  const FcnModel& model() const { return *model_; }

 private:
  std::shared_ptr<const FcnModel> model_;
};

/// Pooled per-class recall counts; background (class 0) is ignored.
class AccuracyAccumulator {
 public:
  explicit AccuracyAccumulator(int classes = 44);
  /// Throws ShapeMismatch.
  void add(const LabelFrame& predicted, const LabelFrame& groundtruth);
  void add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> groundtruth);
  /// Mean recall over foreground classes present in the groundtruth seen so
  /// far; 0 when none was seen.
  double average() const;
  double recall(int cls) const;
  std::uint64_t support(int cls) const { return total_[static_cast<std::size_t>(cls)]; }

 private:
  std::vector<std::uint64_t> correct_;
  std::vector<std::uint64_t> total_;
};

double avg_per_class_accuracy(const LabelFrame& predicted, const LabelFrame& groundtruth);

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double clip_norm = 0.0;  // rescales the batch gradient to at most this L2 norm; 0 disables
};

/// Optimizer state: one velocity tensor per parameter.
struct SgdState {
  std::vector<ParamTensor<float>> velocity;
};

struct TrainingExample {
  Tensor<float> input;
  std::vector<std::uint8_t> labels;  // window resolution
};

TrainingExample make_training_example(const DepthFrame& depth, const LabelFrame& labels, int size);

/// One momentum step on the mean per-pixel cross-entropy of the batch
/// (background included). Per-example gradients are reduced in batch order.
/// Returns that mean loss. Throws NonFiniteLoss, InvalidArgument.
double fcn_backward_step(FcnModel& model, std::span<const TrainingExample> batch, const SgdConfig& cfg,
                         SgdState& state);

struct CurriculumStage {
  std::string name;
  std::filesystem::path train;       // MVDS container
  std::filesystem::path validation;  // MVDS container
  int iterations = 1000;
  double learning_rate = 0.01;
  int batch_size = 8;
  int lr_step = 0;  // iterations between decays; 0 disables
  double lr_gamma = 0.1;
  int warmup = 0;  // iterations of linear learning-rate ramp at the stage start
};

struct CurriculumOptions {
  FcnTopology topology;
  std::uint64_t seed = 1;
  double momentum = 0.9;
  double clip_norm = 0.0;
  int eval_every = 0;           // periodic validation on the current stage; 0 disables
  std::size_t validation_limit = 0;  // max validation images; 0 = all
  std::function<void(const std::string&)> progress;
};

struct AccuracyLogEntry {
  std::string stage;
  int iteration = 0;  // global iteration count
  std::string split;  // validation container stem
  double accuracy = 0.0;
};

struct CurriculumResult {
  FcnModel model;
  std::vector<AccuracyLogEntry> log;
};

/// Trains stage after stage from one initialization. At the start and end
/// of every stage, each validation split seen so far is scored. Throws
/// InvalidStage for an empty schedule or zero budgets.
CurriculumResult train_curriculum(std::span<const CurriculumStage> schedule, const CurriculumOptions& options,
                                  const FcnModel* initial = nullptr);

/// Pooled average per-class accuracy over the first `limit` images (all
/// when 0) of a container, counted in window coordinates.
double evaluate_classifier(const FcnModel& model, const std::filesystem::path& container, std::size_t limit = 0);

void write_accuracy_log(const std::filesystem::path& path, std::span<const AccuracyLogEntry> log);

ModelChunk fcn_to_chunk(const FcnModel& model);
FcnModel fcn_from_chunk(const ModelChunk& chunk);
void save_fcn(const std::filesystem::path& path, const FcnModel& model);
FcnModel load_fcn(const std::filesystem::path& path);

}  // namespace mvdp
