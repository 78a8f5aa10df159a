#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mvdp/error.hpp"
#include "mvdp/pose_regressor.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace mvdp;

namespace {

FeatureVector random_features(int classes, std::mt19937_64& rng, double absent_rate = 0.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution absent(absent_rate);
  FeatureVector f(classes);
  for (int c = 0; c < classes; ++c) {
    if (absent(rng)) continue;
    f.present[static_cast<std::size_t>(c)] = 1;
    for (int k = 0; k < kStatsPerClass; ++k) f.values[static_cast<std::size_t>(c * kStatsPerClass + k)] = n(rng);
  }
  return f;
}

/// Synthetic regression set: targets linear in the first few features plus
/// Gaussian noise. `per_sequence` consecutive samples share a sequence id.
std::vector<CvSample> linear_set(int n, int classes, int joints, double noise, std::mt19937_64& rng,
                                 int per_sequence = 1) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(6, 3 * joints);
  for (Eigen::Index i = 0; i < truth.size(); ++i) truth.data()[i] = 0.1 * g(rng);
  std::vector<CvSample> out;
  for (int i = 0; i < n; ++i) {
    CvSample s;
    s.features = random_features(classes, rng);
    s.target.resize(static_cast<std::size_t>(joints));
    for (int j = 0; j < joints; ++j)
      for (int k = 0; k < 3; ++k) {
        double y = 0.5;
        for (int f = 0; f < 6; ++f) y += truth(f, 3 * j + k) * s.features.values[static_cast<std::size_t>(f)];
        s.target[static_cast<std::size_t>(j)][k] = y + noise * g(rng);
      }
    s.sequence = static_cast<std::uint32_t>(i / per_sequence);
    s.frame = static_cast<std::uint32_t>(i % per_sequence);
    out.push_back(std::move(s));
  }
  return out;
}

double pose_error(const PoseEstimate& a, const PoseEstimate& b) {
  double s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]).norm();
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST_SUITE("pose_regressor") {

TEST_CASE("ridge on the identity") {
  const int n = 6;
  const Eigen::MatrixXd X = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd Y = Eigen::MatrixXd::Random(n, 3);
  CHECK(fit_ridge(X, Y, 0.0).isApprox(Y, 1e-14));
  CHECK(fit_ridge(X, Y, 0.5, false).isApprox(Y / 1.5, 1e-14));
  const Eigen::MatrixXd W = fit_ridge(X, Y, 0.5, true);
  CHECK(W.topRows(n - 1).isApprox(Y.topRows(n - 1) / 1.5, 1e-14));
  CHECK(W.row(n - 1).isApprox(Y.row(n - 1), 1e-14));
}

TEST_CASE("ridge matches the gradient-descent oracle") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::MatrixXd X(200, 50), Y(200, 4);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = g(rng);
    X.col(49).setOnes();
    const double lambda = std::pow(10.0, trial - 1);
    const Eigen::MatrixXd got = fit_ridge(X, Y, lambda);
    const Eigen::MatrixXd want = test::ridge_gradient_descent(X, Y, lambda, true);
    CHECK((got - want).norm() / want.norm() < 1e-6);
  }
}

TEST_CASE("ridge error cases") {
  CHECK_THROWS_AS(fit_ridge(Eigen::MatrixXd::Ones(4, 3), Eigen::MatrixXd::Ones(5, 2), 1.0), Error);
  CHECK_THROWS_AS(fit_ridge(Eigen::MatrixXd::Ones(4, 3), Eigen::MatrixXd::Ones(4, 2), -1.0), Error);
  // Rank-deficient and unregularized.
  CHECK_THROWS_AS(fit_ridge(Eigen::MatrixXd::Ones(4, 3), Eigen::MatrixXd::Ones(4, 2), 0.0), Error);
}

TEST_CASE("bias-only model predicts the mean pose") {
  std::mt19937_64 rng(1);
  RegressorModel m;
  m.classes = 43;
  m.joints = 21;
  m.feature_mean.assign(1032, 0.0);
  m.feature_scale.assign(1032, 1.0);
  m.weights = Eigen::MatrixXd::Zero(m.input_dim(), 63);
  PoseEstimate mean(21);
  for (int j = 0; j < 21; ++j) mean[static_cast<std::size_t>(j)] = Vec3(j, -j, 0.5 * j);
  m.weights.row(m.input_dim() - 1) = pose_matrix(std::vector<PoseEstimate>{mean}).row(0);
  for (int i = 0; i < 3; ++i) CHECK(pose_error(predict(m, random_features(43, rng, 0.3)), mean) < 1e-12);
}

TEST_CASE("tiny solvable set is interpolated") {
  std::mt19937_64 rng(2);
  std::vector<FeatureVector> f;
  std::vector<PoseEstimate> y;
  for (int i = 0; i < 5; ++i) {
    f.push_back(random_features(4, rng));
    PoseEstimate p(3);
    for (auto& v : p) v = Vec3::Random();
    y.push_back(p);
  }
  const auto m = train_regressor(f, y, 1e-10);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(pose_error(predict(m, f[i]), y[i]) <= 1e-6);
}

TEST_CASE("empty cloud predicts the bias response") {
  std::mt19937_64 rng(3);
  auto set = linear_set(40, 3, 2, 0.01, rng);
  std::vector<FeatureVector> f;
  std::vector<PoseEstimate> y;
  for (auto& s : set) {
    f.push_back(s.features);
    y.push_back(s.target);
  }
  const auto m = train_regressor(f, y, 0.1);
  const auto p = predict(m, FeatureVector(3));
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 3; ++k) {
      CHECK(std::isfinite(p[static_cast<std::size_t>(j)][k]));
      CHECK(p[static_cast<std::size_t>(j)][k] == doctest::Approx(m.weights(m.input_dim() - 1, 3 * j + k)));
    }
  CHECK_THROWS_AS(predict(m, FeatureVector(5)), Error);
  CHECK_THROWS_AS(train_regressor({}, {}, 1.0), Error);
}

TEST_CASE("smoothing arithmetic") {
  const PoseEstimate two{Vec3(2, 2, 2)}, zero{Vec3::Zero()};
  const std::vector<PoseEstimate> hist{two, zero};
  CHECK(smooth(hist, SmoothingConfig::off())[0] == two[0]);
  CHECK(smooth(hist, SmoothingConfig::from_weights({0.5, 0.5}))[0].isApprox(Vec3(1, 1, 1)));
  const std::vector<PoseEstimate> constant(5, PoseEstimate{Vec3(0.3, -0.2, 1.0)});
  CHECK(smooth(constant, SmoothingConfig::exponential(4, 0.5))[0].isApprox(constant[0][0], 1e-15));
  // Only one estimate available: renormalized to the newest weight alone.
  CHECK(smooth(std::vector<PoseEstimate>{two}, SmoothingConfig::exponential(3, 0.7))[0] == two[0]);

  for (int k : {0, 1, 4, 8})
    for (double rho : {0.25, 0.5, 1.0}) {
      const auto cfg = SmoothingConfig::exponential(k, rho);
      CHECK(cfg.window() == k);
      CHECK(std::abs(std::accumulate(cfg.weights.begin(), cfg.weights.end(), 0.0) - 1.0) <= 1e-12);
      CHECK_NOTHROW(cfg.validate());
    }
  CHECK_THROWS_AS(SmoothingConfig::from_weights({-1.0, 2.0}), Error);
  CHECK_THROWS_AS(SmoothingConfig::from_weights({0.0, 0.0}), Error);

  Smoother s(SmoothingConfig::from_weights({0.5, 0.5}));
  CHECK(s.push(two)[0] == two[0]);
  CHECK(s.push(zero)[0].isApprox(Vec3(1, 1, 1)));
  s.reset();
  CHECK(s.push(zero)[0] == zero[0]);
}

TEST_CASE("cross-validation with a single grid point") {
  std::mt19937_64 rng(4);
  const auto set = linear_set(30, 2, 2, 0.05, rng);
  CvOptions opt;
  opt.lambdas = {0.7};
  opt.smoothings = {SmoothingConfig::off()};
  const auto r = cross_validate(set, opt);
  CHECK(r.lambda == 0.7);
  CHECK(r.smoothing.window() == 0);
  CHECK(r.report.size() == 1);
  opt.folds = 31;
  CHECK_THROWS_AS(cross_validate(set, opt), Error);
}

TEST_CASE("sequences never straddle folds") {
  std::mt19937_64 rng(5);
  const auto set = linear_set(60, 2, 1, 0.05, rng, 6);
  const auto r = cross_validate(set, CvOptions::defaults());
  std::map<std::uint32_t, int> fold_of_seq;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto [it, inserted] = fold_of_seq.emplace(set[i].sequence, r.fold_of[i]);
    if (!inserted) CHECK(it->second == r.fold_of[i]);
  }
  CHECK(r.report.size() == CvOptions::defaults().lambdas.size() * CvOptions::defaults().smoothings.size());
}

TEST_CASE("reported CV error matches an independent scorer") {
  std::mt19937_64 rng(6);
  const auto set = linear_set(80, 2, 2, 0.05, rng, 8);
  const auto r = cross_validate(set, CvOptions::defaults());
  // Refit each fold through the public training entry point, then smooth
  // each held-out sequence in frame order.
  std::vector<PoseEstimate> pred(set.size());
  for (int fold = 0; fold < 5; ++fold) {
    std::vector<FeatureVector> f;
    std::vector<PoseEstimate> y;
    for (std::size_t i = 0; i < set.size(); ++i)
      if (r.fold_of[i] != fold) {
        f.push_back(set[i].features);
        y.push_back(set[i].target);
      }
    const auto m = train_regressor(f, y, r.lambda);
    for (std::size_t i = 0; i < set.size(); ++i)
      if (r.fold_of[i] == fold) pred[i] = predict(m, set[i].features);
  }
  const auto& w = r.smoothing.weights;
  double total = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    PoseEstimate sm(pred[i].size(), Vec3::Zero());
    double wsum = 0;
    for (std::size_t lag = 0; lag < w.size() && lag <= set[i].frame; ++lag) {
      const std::size_t src = i - lag;  // frames of a sequence are stored consecutively
      for (std::size_t j = 0; j < sm.size(); ++j) sm[j] += w[lag] * pred[src][j];
      wsum += w[lag];
    }
    for (auto& v : sm) v /= wsum;
    total += pose_error(sm, set[i].target);
  }
  const double independent = total / static_cast<double>(set.size());
  CHECK(std::abs(independent - r.mean_error) <= 1e-12);
  const auto lambdas = CvOptions::defaults().lambdas;
  for (const auto& row : r.report) {
    if (row.window != 0) continue;
    const auto li = static_cast<std::size_t>(std::find(lambdas.begin(), lambdas.end(), row.lambda) - lambdas.begin());
    REQUIRE(li < lambdas.size());
    CHECK(std::abs(score_smoothed(set, r.out_of_fold[li], SmoothingConfig::off()) - row.mean_error) <= 1e-12);
  }
}

TEST_CASE("target noise pushes the selected lambda up") {
  CvOptions opt;
  opt.smoothings = {SmoothingConfig::off()};
  for (int i = 0; i < 12; ++i) opt.lambdas.push_back(std::pow(10.0, -3.0 + 0.5 * i));
  double clean = 0, noisy = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    std::mt19937_64 a(100 + trial), b(100 + trial);
    clean += std::log10(cross_validate(linear_set(60, 2, 1, 0.01, a), opt).lambda);
    noisy += std::log10(cross_validate(linear_set(60, 2, 1, 1.0, b), opt).lambda);
  }
  MESSAGE("mean log10 lambda: clean " << clean / 20 << ", noisy " << noisy / 20);
  CHECK(noisy > clean);
}

TEST_CASE("regressor file round trip") {
  std::mt19937_64 rng(7);
  auto set = linear_set(30, 3, 2, 0.05, rng);
  std::vector<FeatureVector> f;
  std::vector<PoseEstimate> y;
  for (auto& s : set) {
    f.push_back(s.features);
    y.push_back(s.target);
  }
  auto m = train_regressor(f, y, 0.3);
  m.smoothing = SmoothingConfig::exponential(4, 0.5);
  m.reference = ReferenceFrame::World;
  test::TempDir dir("regressor");
  save_regressor(dir.path() / "r.mvdm", m);
  const auto back = load_regressor(dir.path() / "r.mvdm");
  CHECK(back.classes == m.classes);
  CHECK(back.joints == m.joints);
  CHECK(back.lambda == m.lambda);
  CHECK(back.weights == m.weights);
  CHECK(back.feature_mean == m.feature_mean);
  CHECK(back.feature_scale == m.feature_scale);
  CHECK(back.smoothing.weights == m.smoothing.weights);
  CHECK(back.reference == ReferenceFrame::World);
}

}  // TEST_SUITE
