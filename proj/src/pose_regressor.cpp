#include "mvdp/pose_regressor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <Eigen/Cholesky>

#include "mvdp/bytes.hpp"
#include "mvdp/error.hpp"

namespace mvdp {

SmoothingConfig SmoothingConfig::from_weights(std::vector<double> weights) {
  if (weights.empty()) throw Error(ErrorCode::InvalidArgument, "smoothing needs at least one weight");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "smoothing weights must be >= 0");
    sum += w;
  }
  if (!(sum > 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothing weights must not all be zero");
  for (double& w : weights) w /= sum;
  SmoothingConfig cfg;
  cfg.weights = std::move(weights);
  return cfg;
}

SmoothingConfig SmoothingConfig::exponential(int window, double rho) {
  if (window < 0 || !(rho > 0.0)) throw Error(ErrorCode::InvalidArgument, "exponential smoothing needs K >= 0, rho > 0");
  std::vector<double> w(static_cast<std::size_t>(window) + 1);
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::pow(rho, static_cast<double>(j));
  auto cfg = from_weights(std::move(w));
  cfg.decay_label_permille = window == 0 ? 0 : static_cast<int>(std::lround(rho * 1000.0));
  return cfg;
}

void SmoothingConfig::validate() const {
  if (weights.empty()) throw Error(ErrorCode::InvalidArgument, "smoothing needs at least one weight");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothing weights must be >= 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw Error(ErrorCode::InvalidArgument, "smoothing weights must sum to 1");
}

PoseEstimate smooth(std::span<const PoseEstimate> history, const SmoothingConfig& cfg) {
  if (history.empty()) throw Error(ErrorCode::InvalidArgument, "smoothing needs at least one estimate");
  const std::size_t n = std::min(history.size(), cfg.weights.size());
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) total += cfg.weights[j];
  PoseEstimate out(history.front().size(), Vec3::Zero());
  if (!(total > 0.0)) return history.front();
  for (std::size_t j = 0; j < n; ++j) {
    if (history[j].size() != out.size()) throw Error(ErrorCode::DimensionMismatch, "estimates differ in joint count");
    const double w = cfg.weights[j] / total;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w * history[j][k];
  }
  return out;
}

Smoother::Smoother(SmoothingConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

PoseEstimate Smoother::push(PoseEstimate estimate) {
  history_.push_front(std::move(estimate));
  while (history_.size() > cfg_.weights.size()) history_.pop_back();
  const std::vector<PoseEstimate> h(history_.begin(), history_.end());
  return smooth(h, cfg_);
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd solve_ridge(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& cross, double lambda, bool free_bias) {
  const auto D = gram.rows();
  if (gram.cols() != D || cross.rows() != D) throw Error(ErrorCode::DimensionMismatch, "ridge system shapes disagree");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "ridge lambda must be >= 0");
  Eigen::MatrixXd A = gram;
  for (Eigen::Index i = 0; i < D; ++i) {
    if (!(free_bias && i == D - 1)) A(i, i) += lambda;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "ridge system is not positive definite");
  const double scale = std::max(A.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  const auto L = llt.matrixLLT().diagonal();
  const double smallest = L.cwiseAbs2().minCoeff();
  if (smallest <= 1e-13 * scale) {
    throw Error(ErrorCode::SingularSystem, "ridge system is rank deficient; use lambda > 0");
  }
  return llt.solve(cross);
}

Eigen::MatrixXd fit_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double lambda, bool free_bias) {
  if (X.rows() != Y.rows()) throw Error(ErrorCode::DimensionMismatch, "X and Y differ in row count");
  if (X.rows() < 1 || X.cols() < 1) throw Error(ErrorCode::InvalidArgument, "ridge needs N >= 1 and D >= 1");
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(X.cols(), X.cols());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
  gram = gram.selfadjointView<Eigen::Lower>();
  const Eigen::MatrixXd cross = X.transpose() * Y;
  return solve_ridge(gram, cross, lambda, free_bias);
}

// ---------------------------------------------------------------------------

namespace {

void check_features(const RegressorModel& model, const FeatureVector& f) {
  if (f.classes != model.classes || f.values.size() != static_cast<std::size_t>(kStatsPerClass) * model.classes ||
      f.present.size() != static_cast<std::size_t>(model.classes)) {
    throw Error(ErrorCode::DimensionMismatch, "feature vector does not match the regressor's class count");
  }
}

}  // namespace

Eigen::RowVectorXd design_row(const RegressorModel& model, const FeatureVector& f) {
  check_features(model, f);
  const int P = model.classes;
  const std::size_t stats = static_cast<std::size_t>(kStatsPerClass) * P;
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(model.input_dim());
  for (std::size_t i = 0; i < stats; ++i) {
    const double s = model.feature_scale[i];
    if (f.present[i / kStatsPerClass] && s > 0.0) row[static_cast<Eigen::Index>(i)] = (f.values[i] - model.feature_mean[i]) / s;
  }
  for (int c = 0; c < P; ++c) row[static_cast<Eigen::Index>(stats) + c] = f.present[static_cast<std::size_t>(c)] ? 1.0 : 0.0;
  row[model.input_dim() - 1] = 1.0;
  return row;
}

Eigen::MatrixXd design_matrix(const RegressorModel& model, std::span<const FeatureVector> features) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(features.size()), model.input_dim());
  for (std::size_t i = 0; i < features.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = design_row(model, features[i]);
  return X;
}

void fit_standardizer(RegressorModel& model, std::span<const FeatureVector> features) {
  const int P = model.classes;
  const std::size_t stats = static_cast<std::size_t>(kStatsPerClass) * P;
  std::vector<double> sum(stats, 0.0);
  std::vector<double> count(stats, 0.0);
  for (const auto& f : features) {
    check_features(model, f);
    for (std::size_t i = 0; i < stats; ++i) {
      if (!f.present[i / kStatsPerClass]) continue;
      sum[i] += f.values[i];
      count[i] += 1.0;
    }
  }
  model.feature_mean.assign(stats, 0.0);
  model.feature_scale.assign(stats, 0.0);
  for (std::size_t i = 0; i < stats; ++i) {
    if (count[i] > 0.0) model.feature_mean[i] = sum[i] / count[i];
  }
  std::vector<double> sq(stats, 0.0);
  for (const auto& f : features) {
    for (std::size_t i = 0; i < stats; ++i) {
      if (!f.present[i / kStatsPerClass]) continue;
      const double d = f.values[i] - model.feature_mean[i];
      sq[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < stats; ++i) {
    if (count[i] == 0.0) continue;
    const double sd = std::sqrt(sq[i] / count[i]);
    const double magnitude = std::max(1.0, std::abs(model.feature_mean[i]));
    model.feature_scale[i] = sd > 1e-12 * magnitude ? sd : 0.0;
  }
}

Eigen::MatrixXd pose_matrix(std::span<const PoseEstimate> poses) {
  const std::size_t J = poses.empty() ? 0 : poses.front().size();
  Eigen::MatrixXd Y(static_cast<Eigen::Index>(poses.size()), static_cast<Eigen::Index>(3 * J));
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (poses[i].size() != J) throw Error(ErrorCode::DimensionMismatch, "poses differ in joint count");
    for (std::size_t j = 0; j < J; ++j) {
      for (int k = 0; k < 3; ++k) Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(3 * j + k)) = poses[i][j][k];
    }
  }
  return Y;
}

RegressorModel train_regressor(std::span<const FeatureVector> features, std::span<const PoseEstimate> targets,
                               double lambda) {
  if (features.empty()) throw Error(ErrorCode::InsufficientData, "no training samples");
  if (features.size() != targets.size()) throw Error(ErrorCode::DimensionMismatch, "feature/target counts differ");
  RegressorModel model;
  model.classes = features.front().classes;
  model.joints = static_cast<int>(targets.front().size());
  model.lambda = lambda;
  fit_standardizer(model, features);
  model.weights = fit_ridge(design_matrix(model, features), pose_matrix(targets), lambda);
  return model;
}

PoseEstimate predict(const RegressorModel& model, const FeatureVector& f) {
  const Eigen::RowVectorXd y = design_row(model, f) * model.weights;
  PoseEstimate out(static_cast<std::size_t>(model.joints));
  for (int j = 0; j < model.joints; ++j) out[static_cast<std::size_t>(j)] = Vec3(y[3 * j], y[3 * j + 1], y[3 * j + 2]);
  return out;
}

// ---------------------------------------------------------------------------

CvOptions CvOptions::defaults() {
  CvOptions o;
  for (int i = 0; i < 8; ++i) o.lambdas.push_back(std::pow(10.0, -4.0 + 7.0 * i / 7.0));
  o.smoothings.push_back(SmoothingConfig::off());
  for (int k : {2, 4, 8}) {
    for (double rho : {0.25, 0.5, 0.75, 1.0}) o.smoothings.push_back(SmoothingConfig::exponential(k, rho));
  }
  return o;
}

double score_smoothed(std::span<const CvSample> samples, std::span<const PoseEstimate> predictions,
                      const SmoothingConfig& smoothing) {
  if (predictions.size() != samples.size()) throw Error(ErrorCode::CountMismatch, "prediction count != sample count");
  std::map<std::uint32_t, std::vector<std::size_t>> sequences;
  for (std::size_t i = 0; i < samples.size(); ++i) sequences[samples[i].sequence].push_back(i);
  std::vector<PoseEstimate> smoothed(samples.size());
  for (auto& [seq, idx] : sequences) {
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return samples[a].frame < samples[b].frame; });
    Smoother sm(smoothing);
    for (auto i : idx) smoothed[i] = sm.push(predictions[i]);
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& t = samples[i].target;
    if (smoothed[i].size() != t.size()) throw Error(ErrorCode::DimensionMismatch, "prediction/target joint counts differ");
    for (std::size_t j = 0; j < t.size(); ++j) sum += (smoothed[i][j] - t[j]).norm();
    n += t.size();
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

CvResult cross_validate(std::span<const CvSample> samples, const CvOptions& options) {
  if (options.lambdas.empty() || options.smoothings.empty()) {
    throw Error(ErrorCode::InvalidArgument, "cross-validation grids must be nonempty");
  }
  if (options.folds < 2 || samples.size() < static_cast<std::size_t>(options.folds)) {
    throw Error(ErrorCode::InsufficientData, "need at least as many samples as folds (and >= 2 folds)");
  }
  for (const auto& s : options.smoothings) s.validate();
  std::vector<std::uint32_t> seqs;
  for (const auto& s : samples) seqs.push_back(s.sequence);
  std::sort(seqs.begin(), seqs.end());
  seqs.erase(std::unique(seqs.begin(), seqs.end()), seqs.end());
  if (seqs.size() < static_cast<std::size_t>(options.folds)) {
    throw Error(ErrorCode::InsufficientData, "need at least as many sequences as folds");
  }

  CvResult result;
  result.fold_of.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto pos = std::lower_bound(seqs.begin(), seqs.end(), samples[i].sequence) - seqs.begin();
    result.fold_of[i] = static_cast<int>(pos % options.folds);
  }
  result.out_of_fold.assign(options.lambdas.size(), std::vector<PoseEstimate>(samples.size()));

  for (int fold = 0; fold < options.folds; ++fold) {
    std::vector<FeatureVector> train_f;
    std::vector<PoseEstimate> train_y;
    std::vector<std::size_t> test;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (result.fold_of[i] == fold) {
        test.push_back(i);
      } else {
        train_f.push_back(samples[i].features);
        train_y.push_back(samples[i].target);
      }
    }
    RegressorModel model;
    model.classes = train_f.front().classes;
    model.joints = static_cast<int>(train_y.front().size());
    fit_standardizer(model, train_f);
    const Eigen::MatrixXd X = design_matrix(model, train_f);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(X.cols(), X.cols());
    gram.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
    gram = gram.selfadjointView<Eigen::Lower>();
    const Eigen::MatrixXd cross = X.transpose() * pose_matrix(train_y);
    for (std::size_t li = 0; li < options.lambdas.size(); ++li) {
      model.weights = solve_ridge(gram, cross, options.lambdas[li]);
      for (auto i : test) result.out_of_fold[li][i] = predict(model, samples[i].features);
    }
  }

  // Visit larger lambdas first and smaller windows first so that only a
  // strictly better score displaces the incumbent.
  std::vector<std::size_t> lam_order(options.lambdas.size());
  std::iota(lam_order.begin(), lam_order.end(), std::size_t{0});
  std::stable_sort(lam_order.begin(), lam_order.end(),
                   [&](auto a, auto b) { return options.lambdas[a] > options.lambdas[b]; });
  std::vector<std::size_t> sm_order(options.smoothings.size());
  std::iota(sm_order.begin(), sm_order.end(), std::size_t{0});
  std::stable_sort(sm_order.begin(), sm_order.end(), [&](auto a, auto b) {
    return options.smoothings[a].window() < options.smoothings[b].window();
  });

  bool have_best = false;
  for (auto li : lam_order) {
    for (auto si : sm_order) {
      const auto& sm = options.smoothings[si];
      const double err = score_smoothed(samples, result.out_of_fold[li], sm);
      result.report.push_back({options.lambdas[li], sm.window(), sm.rho(), err});
      if (!have_best || err < result.mean_error * (1.0 - 1e-12)) {
        have_best = true;
        result.mean_error = err;
        result.lambda = options.lambdas[li];
        result.smoothing = sm;
      }
    }
  }
  return result;
}

void write_cv_report(const std::filesystem::path& path, std::span<const CvRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "lambda,window,rho,mean_error\n";
  out.precision(10);
  for (const auto& r : rows) out << r.lambda << ',' << r.window << ',' << r.rho << ',' << r.mean_error << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------

ModelChunk regressor_to_chunk(const RegressorModel& model) {
  detail::ByteSink s;
  s.u32(static_cast<std::uint32_t>(model.classes));
  s.u32(static_cast<std::uint32_t>(model.joints));
  s.f64(model.lambda);
  s.u32(static_cast<std::uint32_t>(model.feature_mean.size()));
  for (double v : model.feature_mean) s.f64(v);
  for (double v : model.feature_scale) s.f64(v);
  s.u32(static_cast<std::uint32_t>(model.weights.rows()));
  s.u32(static_cast<std::uint32_t>(model.weights.cols()));
  for (Eigen::Index r = 0; r < model.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.weights.cols(); ++c) s.f64(model.weights(r, c));
  }
  s.u32(static_cast<std::uint32_t>(model.smoothing.weights.size()));
  for (double w : model.smoothing.weights) s.f64(w);
  s.i32(model.smoothing.decay_label_permille);
  s.u8(static_cast<std::uint8_t>(model.reference));
  ModelChunk c;
  c.type = {'R', 'I', 'D', 'G'};
  c.payload = std::move(s.bytes());
  return c;
}

RegressorModel regressor_from_chunk(const ModelChunk& chunk) {
  if (!chunk.is("RIDG")) throw Error(ErrorCode::FormatError, "not a regressor chunk");
  detail::ByteSource src(chunk.payload);
  RegressorModel m;
  m.classes = static_cast<int>(src.u32());
  m.joints = static_cast<int>(src.u32());
  m.lambda = src.f64();
  const auto stats = src.u32();
  if (stats != static_cast<std::uint32_t>(kStatsPerClass * m.classes)) {
    throw Error(ErrorCode::FormatError, "standardizer size does not match class count");
  }
  m.feature_mean.resize(stats);
  m.feature_scale.resize(stats);
  for (auto& v : m.feature_mean) v = src.f64();
  for (auto& v : m.feature_scale) v = src.f64();
  const auto rows = src.u32();
  const auto cols = src.u32();
  if (rows != static_cast<std::uint32_t>(m.input_dim()) || cols != static_cast<std::uint32_t>(3 * m.joints)) {
    throw Error(ErrorCode::FormatError, "weight matrix shape does not match the model");
  }
  m.weights.resize(rows, cols);
  for (Eigen::Index r = 0; r < m.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.weights.cols(); ++c) m.weights(r, c) = src.f64();
  }
  const auto nw = src.u32();
  if (nw == 0 || nw > 4096) throw Error(ErrorCode::FormatError, "implausible smoothing window");
  m.smoothing.weights.resize(nw);
  for (auto& w : m.smoothing.weights) w = src.f64();
  m.smoothing.decay_label_permille = src.i32();
  const auto reference = src.u8();
  if (reference > static_cast<std::uint8_t>(ReferenceFrame::World)) throw Error(ErrorCode::FormatError, "bad reference frame");
  m.reference = static_cast<ReferenceFrame>(reference);
  if (!src.done()) throw Error(ErrorCode::FormatError, "trailing bytes in regressor chunk");
  try {
    m.smoothing.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::FormatError, e.what());
  }
  return m;
}

void save_regressor(const std::filesystem::path& path, const RegressorModel& model) {
  const ModelChunk chunk = regressor_to_chunk(model);
  write_model_file(path, std::span<const ModelChunk>(&chunk, 1));
}

RegressorModel load_regressor(const std::filesystem::path& path) {
  const auto chunks = read_model_file(path);
  return regressor_from_chunk(find_chunk(chunks, "RIDG"));
}

}  // namespace mvdp
