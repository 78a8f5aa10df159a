#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mvdp/geometry.hpp"
#include "mvdp/model_io.hpp"
#include "mvdp/view_aggregation.hpp"

namespace mvdp {

/// Joint positions in the reference frame, meters.
using PoseEstimate = std::vector<Vec3>;

/// Convex temporal weights: weights[j] multiplies the estimate j frames ago.
struct SmoothingConfig {
  std::vector<double> weights = {1.0};
  int decay_label_permille = 0;  // informational: rho * 1000 of an exponential family, 0 if custom

  /// Normalizes arbitrary nonnegative weights. Throws InvalidArgument.
  static SmoothingConfig from_weights(std::vector<double> weights);
  /// weights[j] proportional to rho^j for j = 0..window.
  static SmoothingConfig exponential(int window, double rho);
  static SmoothingConfig off() { return {}; }

  int window() const { return static_cast<int>(weights.size()) - 1; }
  double rho() const { return decay_label_permille / 1000.0; }
  /// Throws InvalidArgument unless weights are nonnegative and sum to 1
  /// within 1e-12.
  void validate() const;
};

/// `history` holds the newest estimate first. With fewer than K + 1
/// estimates the available weights are renormalized.
PoseEstimate smooth(std::span<const PoseEstimate> history, const SmoothingConfig& cfg);

/// Per-sequence ring buffer applying smooth() to a stream of estimates.
class Smoother {
 public:
  explicit Smoother(SmoothingConfig cfg = {});
  PoseEstimate push(PoseEstimate estimate);
  void reset() { history_.clear(); }
  const SmoothingConfig& config() const { return cfg_; }

 private:
  SmoothingConfig cfg_;
  std::deque<PoseEstimate> history_;
};

/// Solves (X'X + lambda * I~) W = X'Y by Cholesky, where I~ is the identity
/// with zero in the last (bias) position when `free_bias` is set.
/// Throws SingularSystem, DimensionMismatch, InvalidArgument.
Eigen::MatrixXd fit_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double lambda, bool free_bias = true);

/// Same solve from precomputed X'X and X'Y.
Eigen::MatrixXd solve_ridge(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& cross, double lambda,
                            bool free_bias = true);

struct RegressorModel {
  int classes = 0;  // P
  int joints = 0;   // J
  double lambda = 0.0;
  std::vector<double> feature_mean;   // 24 * P
  std::vector<double> feature_scale;  // 24 * P; 0 marks a constant feature
  Eigen::MatrixXd weights;            // (25 * P + 1) x 3J
  SmoothingConfig smoothing;
  ReferenceFrame reference = ReferenceFrame::FirstCamera;  // frame of features and targets

  int input_dim() const { return 25 * classes + 1; }
};

/// Design row: z-scored statistics (absent classes and constant features
/// give 0), then presence flags, then a constant 1.
Eigen::RowVectorXd design_row(const RegressorModel& model, const FeatureVector& f);
Eigen::MatrixXd design_matrix(const RegressorModel& model, std::span<const FeatureVector> features);

/// Standardization statistics from present entries only.
void fit_standardizer(RegressorModel& model, std::span<const FeatureVector> features);

Eigen::MatrixXd pose_matrix(std::span<const PoseEstimate> poses);

/// Throws InsufficientData, DimensionMismatch, SingularSystem.
RegressorModel train_regressor(std::span<const FeatureVector> features, std::span<const PoseEstimate> targets,
                               double lambda);

/// Throws DimensionMismatch.
PoseEstimate predict(const RegressorModel& model, const FeatureVector& f);

struct CvSample {
  FeatureVector features;
  PoseEstimate target;
  std::uint32_t sequence = 0;  // frames sharing a sequence stay in one fold
  std::uint32_t frame = 0;     // temporal order within the sequence
};

struct CvOptions {
  std::vector<double> lambdas;
  std::vector<SmoothingConfig> smoothings;
  int folds = 5;

  /// 8 log-spaced lambdas over [1e-4, 1e3] and K in {0, 2, 4, 8} with
  /// rho in {0.25, 0.5, 0.75, 1}.
  static CvOptions defaults();
};

struct CvRow {
  double lambda = 0.0;
  int window = 0;
  double rho = 0.0;
  double mean_error = 0.0;  // meters, over held-out frames and joints
};

struct CvResult {
  double lambda = 0.0;
  SmoothingConfig smoothing;
  double mean_error = 0.0;
  std::vector<CvRow> report;
  std::vector<int> fold_of;  // per input sample
  /// Unsmoothed held-out predictions, per lambda then per sample.
  std::vector<std::vector<PoseEstimate>> out_of_fold;
};

/// Sequence-aware k-fold cross-validation over the lambda x smoothing grid.
/// Smoothing runs over each held-out sequence in frame order. Ties prefer
/// the larger lambda, then the smaller window. Throws InsufficientData.
CvResult cross_validate(std::span<const CvSample> samples, const CvOptions& options);

/// Mean Euclidean joint error of smoothed out-of-fold predictions, computed
/// the same way cross_validate scores a grid point.
double score_smoothed(std::span<const CvSample> samples, std::span<const PoseEstimate> predictions,
                      const SmoothingConfig& smoothing);

void write_cv_report(const std::filesystem::path& path, std::span<const CvRow> rows);

ModelChunk regressor_to_chunk(const RegressorModel& model);
RegressorModel regressor_from_chunk(const ModelChunk& chunk);
void save_regressor(const std::filesystem::path& path, const RegressorModel& model);
RegressorModel load_regressor(const std::filesystem::path& path);

}  // namespace mvdp
