#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <string>

#include "doctest.h"
#include "mvdp/error.hpp"
#include "mvdp/evaluation.hpp"
#include "temp_dir.hpp"

using namespace mvdp;
namespace fs = std::filesystem;

namespace {

std::vector<PoseEstimate> random_poses(std::size_t n, int joints, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.3);
  std::vector<PoseEstimate> out(n, PoseEstimate(static_cast<std::size_t>(joints)));
  for (auto& p : out)
    for (auto& v : p) v = Vec3(g(rng), g(rng), g(rng));
  return out;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

std::map<std::string, std::string> golden_headers() {
  std::ifstream in(std::string(MVDP_GOLDEN_DIR) + "/csv_headers.txt");
  std::map<std::string, std::string> out;
  for (std::string key, value; in >> key >> value;) out[key] = value;
  return out;
}

struct Fixture {
  test::TempDir dir{"evaluation"};
  fs::path train, test_seq;
  RegressorModel regressor;
  OracleClassifier oracle;

  Fixture() {
    auto cfg = DatasetConfig::with_resolution(64);
    train = generate_dataset(Stage::Easy, Split::Train, 60, 2, dir.path(), 1, cfg).container_path;
    cfg.sequence_length = 5;
    test_seq = generate_dataset(Stage::Easy, Split::Test, 10, 2, dir.path(), 2, cfg).container_path;
    CvOptions cv = CvOptions::defaults();
    cv.smoothings = {SmoothingConfig::off(), SmoothingConfig::exponential(2, 0.5)};
    regressor = fit_pipeline_regressor(std::vector<fs::path>{train}, oracle, cv, 1).model;
    regressor.smoothing = SmoothingConfig::exponential(2, 0.5);
  }
};

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("mean joint error") {
  std::mt19937_64 rng(1);
  const auto truth = random_poses(4, 3, rng);
  auto r = mean_joint_error(truth, truth);
  CHECK(r.overall == 0.0);
  for (double m : r.mean) CHECK(m == 0.0);

  auto moved = truth;
  moved[2][1] += Vec3(0.03, 0.04, 0.0);
  r = mean_joint_error(moved, truth);
  CHECK(r.mean[1] == doctest::Approx(0.05 / 4));
  CHECK(r.mean[0] == 0.0);
  CHECK(r.overall == doctest::Approx(0.05 / 12));

  const auto pred = random_poses(50, 5, rng);
  const auto gt = random_poses(50, 5, rng);
  r = mean_joint_error(pred, gt);
  double total = 0;
  for (int j = 0; j < 5; ++j) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      const double e = (pred[i][static_cast<std::size_t>(j)] - gt[i][static_cast<std::size_t>(j)]).norm();
      s += e;
      s2 += e * e;
    }
    const double mean = s / 50;
    CHECK(std::abs(r.mean[static_cast<std::size_t>(j)] - mean) <= 1e-12);
    CHECK(std::abs(r.stddev[static_cast<std::size_t>(j)] - std::sqrt(s2 / 50 - mean * mean)) <= 1e-9);
    total += s;
  }
  CHECK(std::abs(r.overall - total / 250) <= 1e-12);
  CHECK_THROWS_AS(mean_joint_error(pred, truth), Error);
}

TEST_CASE("precision at thresholds") {
  std::mt19937_64 rng(2);
  const auto truth = random_poses(10, 4, rng);
  const auto th = default_thresholds();
  CHECK(th.size() == 19);
  CHECK(th.front() == doctest::Approx(0.02));
  CHECK(th.back() == doctest::Approx(0.20));
  auto c = precision_at(truth, truth, th);
  for (double p : c.precision) CHECK(p == 1.0);

  auto off = truth;
  for (auto& p : off)
    for (auto& v : p) v += Vec3(0.15, 0, 0);
  CHECK(precision_at(off, truth, th).at(kHeadlineThreshold) == 0.0);

  auto mixed = truth;
  for (std::size_t i = 0; i < mixed.size(); ++i)
    for (auto& v : mixed[i]) v += Vec3(0, i % 2 ? 0.05 : 0.12, 0);
  CHECK(precision_at(mixed, truth, th).at(0.10) == 0.5);

  const std::vector<double> bad{0.2, 0.1};
  CHECK_THROWS_AS(precision_at(truth, truth, bad), Error);
  CHECK_THROWS_AS(PrecisionCurve{}.at(0.1), Error);
}

TEST_CASE("mean pose baseline") {
  const std::vector<PoseEstimate> poses{{Vec3(0, 0, 0)}, {Vec3(2, 4, 6)}};
  CHECK(mean_pose(poses)[0].isApprox(Vec3(1, 2, 3)));
}

TEST_CASE("csv outputs keep their frozen headers") {
  const auto golden = golden_headers();
  REQUIRE(golden.size() == 6);
  test::TempDir dir("csv");
  std::mt19937_64 rng(3);
  const auto poses = random_poses(3, 2, rng);
  write_predictions(dir.path() / "p.csv", poses);
  CHECK(first_line(dir.path() / "p.csv") == golden.at("predictions"));
  const auto back = read_predictions(dir.path() / "p.csv");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK((back[i][j] - poses[i][j]).norm() < 1e-8);

  write_joint_report(dir.path() / "j.csv", mean_joint_error(poses, poses), {"a", "b"});
  CHECK(first_line(dir.path() / "j.csv") == golden.at("joint_errors"));
  write_precision_curve(dir.path() / "c.csv", precision_at(poses, poses, default_thresholds()));
  CHECK(first_line(dir.path() / "c.csv") == golden.at("precision"));
  write_timings(dir.path() / "t.csv", std::vector<StageTiming>{{"fuse", {1.0, 2.0}}});
  CHECK(first_line(dir.path() / "t.csv") == golden.at("timings"));
  write_cv_report(dir.path() / "cv.csv", std::vector<CvRow>{{1.0, 0, 0.0, 0.1}});
  CHECK(first_line(dir.path() / "cv.csv") == golden.at("cv_report"));
  write_accuracy_log(dir.path() / "a.csv", std::vector<AccuracyLogEntry>{{"easy", 0, "easy_validation", 0.5}});
  CHECK(first_line(dir.path() / "a.csv") == golden.at("accuracy_log"));

  std::ofstream(dir.path() / "bad.csv") << "frame,joint,x,y,z\n0,0,1,2\n";
  CHECK_THROWS_AS(read_predictions(dir.path() / "bad.csv"), Error);
}

TEST_CASE("stage timing summaries") {
  const StageTiming t{"x", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20}};
  CHECK(t.total() == doctest::Approx(210));
  CHECK(t.mean() == doctest::Approx(10.5));
  CHECK(t.p95() == doctest::Approx(19.0).epsilon(0.06));
}

TEST_CASE_FIXTURE(Fixture, "pipeline runs are deterministic and accounted") {
  ExperimentConfig cfg;
  cfg.container = test_seq;
  cfg.classifier = &oracle;
  cfg.regressor = &regressor;
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  CHECK(a.frames == 10);
  CHECK(a.predictions.size() == 10);
  CHECK(a.errors.overall == b.errors.overall);
  CHECK(a.precision.precision == b.precision.precision);
  for (std::size_t i = 0; i < a.predictions.size(); ++i) CHECK(a.predictions[i] == b.predictions[i]);
  CHECK_FALSE(a.dense_accuracy.has_value());

  double staged = 0;
  for (const auto& s : a.stages) staged += s.total();
  CHECK(std::abs(staged - a.wall_ms) <= 0.05 * a.wall_ms);

  // Smoothing changes later frames but never the first frame of a sequence.
  cfg.smoothing = false;
  const auto raw = run_experiment(cfg);
  CHECK(raw.predictions[0] == a.predictions[0]);
  CHECK(raw.predictions[5] == a.predictions[5]);
  CHECK(raw.predictions[1] != a.predictions[1]);

}

TEST_CASE_FIXTURE(Fixture, "sequence containers share sequence ids") {
  const auto frames = container_features(oracle, test_seq, 1);
  const auto samples = cv_samples(frames, test_seq, 7);
  REQUIRE(samples.size() == 10);
  CHECK(samples[0].sequence == 7);
  CHECK(samples[4].sequence == 7);
  CHECK(samples[5].sequence == 8);
  CHECK(samples[6].frame == 1);
  const auto indep = cv_samples(container_features(oracle, train, 1, {}, 4), train);
  CHECK(indep[0].sequence != indep[1].sequence);
}

}  // TEST_SUITE
