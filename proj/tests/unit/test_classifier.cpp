#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "mvdp/dense_classifier.hpp"
#include "mvdp/error.hpp"
#include "mvdp/synth_renderer.hpp"
#include "temp_dir.hpp"

using namespace mvdp;

namespace {

DepthFrame block_frame(int size, int x0, int x1, int y0, int y1, std::uint8_t level) {
  DepthFrame d(size, size);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) d.levels[static_cast<std::size_t>(y) * size + x] = level;
  return d;
}

Sample rendered(std::uint64_t seed, int size = 64, Stage stage = Stage::Easy) {
  const auto cfg = DatasetConfig::with_resolution(size);
  const auto chars = build_character_pool(stage, 1);
  return sample(chars, cfg.range, cfg.postures, cfg.postures.ids(Split::Train, false), 1, seed);
}

std::set<int> foreground_set(const DepthFrame& d) {
  std::set<int> s;
  for (int i = 0; i < d.width * d.height; ++i)
    if (d.levels[static_cast<std::size_t>(i)] != kBackgroundLevel) s.insert(i);
  return s;
}

FcnTopology small_topology(int size) {
  FcnTopology t;
  t.input_size = size;
  t.block_channels = {4, 8};
  t.convs_per_block = 1;
  t.fusion_stages = 1;
  t.final_kernel = 3;
  return t;
}

}  // namespace

TEST_SUITE("dense_classifier") {

TEST_CASE("window margin scales with the window") {
  CHECK(window_margin(250) == 30);
  CHECK(window_margin(128) == 15);
  CHECK(window_margin(64) == 8);
}

TEST_CASE("centered foreground at the target depth is left untouched") {
  const int S = 64, m = window_margin(S);
  const auto level = quantize_depth(kTargetDepth);
  const auto d = block_frame(S, m, S - 1 - m, m + 5, S - 1 - m - 5, level);
  const auto img = preprocess(d, S);
  CHECK(img.scale == doctest::Approx(1.0));
  CHECK(img.offset.norm() < 1e-12);
  CHECK(img.level_shift == 0);
  CHECK(img.levels == d.levels);
}

TEST_CASE("a person at 3.2 m is shifted by -1.6 m") {
  const int S = 64;
  const auto d = block_frame(S, 20, 40, 10, 50, quantize_depth(3.2));
  const auto img = preprocess(d, S);
  CHECK(img.depth_shift() == doctest::Approx(-1.6).epsilon(0.02));
  double sum = 0;
  int n = 0;
  for (auto l : img.levels)
    if (l != kBackgroundLevel) {
      sum += dequantize_depth(l);
      ++n;
    }
  CHECK(std::abs(sum / n - kTargetDepth) <= 0.5 * kQuantizationStep + 1e-12);
}

TEST_CASE("inverse mapping reproduces the source foreground") {
  for (int S : {32, 64, 128}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto smp = rendered(seed);
      const auto& d = smp.views[0].depth;
      if (d.foreground_count() == 0) continue;
      const auto img = preprocess(d, S);
      const auto fg = foreground_set(d);
      std::set<int> mapped, sampled;
      for (int i = 0; i < d.width * d.height; ++i)
        if (img.source_to_window[static_cast<std::size_t>(i)] >= 0) mapped.insert(i);
      for (auto s : img.window_to_source)
        if (s >= 0) sampled.insert(s);
      CHECK(mapped == fg);
      for (int s : sampled) CHECK(fg.count(s) == 1);
      if (img.scale >= 1.0) CHECK(sampled == fg);
      for (int i : fg) {
        // Each source pixel's window pixel maps back within one source pixel.
        const int w = img.source_to_window[static_cast<std::size_t>(i)];
        const Vec2 back = img.to_source(Vec2(w % S, w / S));
        CHECK((back - Vec2(i % d.width, i / d.width)).cwiseAbs().maxCoeff() <= 0.5 / img.scale + 1e-9);
      }
    }
  }
}

TEST_CASE("empty frames are rejected") {
  CHECK_THROWS_AS(preprocess(DepthFrame(16, 16), 32), Error);
  const OracleClassifier oracle;
  LabelFrame none(16, 16);
  CHECK_THROWS_AS(oracle.classify(DepthFrame(16, 16), &none, 0), Error);
}

TEST_CASE("oracle replays the groundtruth") {
  const auto smp = rendered(3);
  const auto& v = smp.views[0];
  const OracleClassifier oracle;
  const auto map = oracle.classify(v.depth, &v.labels, 1);
  CHECK(map.argmax().labels == v.labels.labels);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      float s = 0;
      for (float p : map.pixel(x, y)) {
        CHECK((p == 0.0f || p == 1.0f));
        s += p;
      }
      CHECK(s == 1.0f);
    }
}

TEST_CASE("oracle at full noise draws labels uniformly") {
  const OracleClassifier noisy(44, 1.0);
  std::vector<double> counts(44, 0.0);
  double total = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto smp = rendered(seed, 128);
    const auto& v = smp.views[0];
    const auto labels = noisy.classify(v.depth, &v.labels, seed).argmax();
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
      if (v.depth.levels[i] == kBackgroundLevel) {
        CHECK(labels.labels[i] == 0);
        continue;
      }
      counts[labels.labels[i]] += 1;
      total += 1;
    }
  }
  CHECK(counts[0] == 0);
  const double expect = total / 43.0;
  for (int c = 1; c < 44; ++c) CHECK(std::abs(counts[static_cast<std::size_t>(c)] - expect) < 5.0 * std::sqrt(expect));
}

TEST_CASE("average per-class accuracy") {
  LabelFrame gt(4, 1), pred(4, 1);
  gt.labels = {0, 1, 2, 2};
  CHECK(avg_per_class_accuracy(gt, gt) == 1.0);
  pred.labels = {0, 0, 0, 0};
  CHECK(avg_per_class_accuracy(pred, gt) == 0.0);
  pred.labels = {0, 1, 2, 1};
  CHECK(avg_per_class_accuracy(pred, gt) == doctest::Approx(0.75));
  CHECK_THROWS_AS(avg_per_class_accuracy(LabelFrame(3, 1), gt), Error);

  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.5);
  LabelFrame g2(100, 100), p2(100, 100);
  for (std::size_t i = 0; i < g2.labels.size(); ++i) {
    g2.labels[i] = i % 2 ? 1 : 2;
    p2.labels[i] = coin(rng) ? 1 : 2;
  }
  CHECK(std::abs(avg_per_class_accuracy(p2, g2) - 0.5) < 0.05);
}

TEST_CASE("learned classifier returns maps in source coordinates") {
  auto model = std::make_shared<const FcnModel>(small_topology(32), 1);
  const FcnClassifier clf(model);
  CHECK(clf.classes() == 44);
  const auto smp = rendered(1);
  const auto& d = smp.views[0].depth;
  const auto map = clf.classify(d, nullptr, 0);
  CHECK(map.width == d.width);
  CHECK(map.height == d.height);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) {
      const auto p = map.pixel(x, y);
      double s = 0;
      for (float v : p) s += v;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
      if (!d.is_foreground(x, y)) CHECK(p[0] == 1.0f);
    }
}

TEST_CASE("single-stage curriculum trains deterministically") {
  test::TempDir dir("curriculum");
  const auto cfg = DatasetConfig::with_resolution(48);
  generate_dataset(Stage::Easy, Split::Train, 8, 1, dir.path(), 3, cfg);
  generate_dataset(Stage::Easy, Split::Validation, 4, 1, dir.path(), 4, cfg);
  CurriculumStage st;
  st.name = "easy";
  st.train = dataset_path(dir.path(), Stage::Easy, Split::Train);
  st.validation = dataset_path(dir.path(), Stage::Easy, Split::Validation);
  st.iterations = 6;
  st.batch_size = 2;
  st.learning_rate = 0.05;
  CurriculumOptions opt;
  opt.topology = small_topology(32);
  opt.seed = 5;
  const std::vector<CurriculumStage> schedule{st};
  const auto a = train_curriculum(schedule, opt);
  const auto b = train_curriculum(schedule, opt);
  REQUIRE(a.log.size() == 2);
  CHECK(a.log[0].iteration == 0);
  CHECK(a.log[1].iteration == 6);
  CHECK(a.log[1].split == "easy_validation");
  for (std::size_t p = 0; p < a.model.params().size(); ++p) CHECK(a.model.params()[p].values == b.model.params()[p].values);
  CHECK(a.log[1].accuracy == b.log[1].accuracy);
  CHECK(a.log[1].accuracy == doctest::Approx(evaluate_classifier(a.model, st.validation)));

  const FcnModel init(opt.topology, opt.seed);
  CHECK(a.model.params()[0].values != init.params()[0].values);

  CHECK_THROWS_AS(train_curriculum(std::span<const CurriculumStage>{}, opt), Error);
  auto zero = schedule;
  zero[0].iterations = 0;
  CHECK_THROWS_AS(train_curriculum(zero, opt), Error);
}

}  // TEST_SUITE
