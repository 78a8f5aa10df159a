#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "mvdp/dense_classifier.hpp"
#include "mvdp/error.hpp"
#include "mvdp/fcn.hpp"
#include "mvdp/synth_renderer.hpp"
#include "temp_dir.hpp"

using namespace mvdp;
using D = double;

namespace {

Tensor<D> random_tensor(int c, int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<D> n(0.0, 1.0);
  Tensor<D> t(c, h, w);
  for (auto& v : t.data) v = n(rng);
  return t;
}

AlignedVector<D> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<D> dist(0.0, 1.0);
  AlignedVector<D> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

D dot(const AlignedVector<D>& a, const AlignedVector<D>& b) {
  D s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Worst relative deviation between an analytic gradient and central
/// differences of `loss` with respect to every entry of `x`.
D fd_check(AlignedVector<D>& x, const AlignedVector<D>& analytic, const std::function<D()>& loss, D eps = 1e-5) {
  D worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const D keep = x[i];
    x[i] = keep + eps;
    const D up = loss();
    x[i] = keep - eps;
    const D down = loss();
    x[i] = keep;
    const D numeric = (up - down) / (2 * eps);
    const D denom = std::max({std::abs(numeric), std::abs(analytic[i]), D(1e-4)});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

FcnTopology tiny_topology() {
  FcnTopology t;
  t.input_size = 16;
  t.classes = 5;
  t.block_channels = {3, 4};
  t.convs_per_block = 1;
  t.fusion_stages = 1;
  t.final_kernel = 3;
  return t;
}

std::vector<std::uint8_t> random_labels(int n, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<std::uint8_t> l(static_cast<std::size_t>(n));
  for (auto& v : l) v = static_cast<std::uint8_t>(u(rng));
  return l;
}

}  // namespace

TEST_SUITE("fcn") {

TEST_CASE("topology validation") {
  FcnTopology t;
  CHECK_NOTHROW(t.validate());
  t.input_size = 100;
  CHECK_THROWS_AS(t.validate(), Error);
  t = FcnTopology{};
  t.final_kernel = 8;
  CHECK_THROWS_AS(t.validate(), Error);
  t = FcnTopology{};
  t.fusion_stages = 4;
  CHECK_THROWS_AS(t.validate(), Error);
}

TEST_CASE("convolution gradients") {
  std::mt19937_64 rng(1);
  const int cin = 2, cout = 3, k = 3;
  auto in = random_tensor(cin, 5, 6, rng);
  RowMatrix<D> w = RowMatrix<D>::Random(cout, cin * k * k);
  AlignedVector<D> bias = random_vector(cout, rng);
  const auto r = random_vector(static_cast<std::size_t>(cout) * 30, rng);
  auto loss = [&] {
    Tensor<D> cols, out;
    layers::conv_forward<D>(in, w, bias, k, cols, out);
    return dot(out.data, r);
  };
  Tensor<D> cols, out;
  layers::conv_forward<D>(in, w, bias, k, cols, out);
  Tensor<D> gout(cout, 5, 6);
  gout.data = r;
  RowMatrix<D> gw = RowMatrix<D>::Zero(cout, cin * k * k);
  AlignedVector<D> gb(cout, 0.0);
  Tensor<D> gin;
  layers::conv_backward<D>(cols, in, w, k, gout, gw, gb, &gin);

  CHECK(fd_check(in.data, gin.data, loss) < 1e-6);
  AlignedVector<D> wv(w.data(), w.data() + w.size());
  AlignedVector<D> gwv(gw.data(), gw.data() + gw.size());
  auto loss_w = [&] {
    std::copy(wv.begin(), wv.end(), w.data());
    return loss();
  };
  CHECK(fd_check(wv, gwv, loss_w) < 1e-6);
  CHECK(fd_check(bias, gb, loss) < 1e-6);
}

TEST_CASE("relu and max pooling gradients") {
  std::mt19937_64 rng(2);
  auto in = random_tensor(2, 6, 8, rng);
  const auto r = random_vector(2 * 3 * 4, rng);
  auto loss = [&] {
    Tensor<D> x = in, out;
    std::vector<std::int32_t> arg;
    layers::relu_forward(x);
    layers::maxpool_forward(x, out, arg);
    return dot(out.data, r);
  };
  Tensor<D> x = in, out;
  std::vector<std::int32_t> arg;
  layers::relu_forward(x);
  layers::maxpool_forward(x, out, arg);
  Tensor<D> gout(2, 3, 4);
  gout.data = r;
  Tensor<D> gin(2, 6, 8);
  layers::maxpool_backward(gout, arg, gin);
  layers::relu_backward(x, gin);
  CHECK(fd_check(in.data, gin.data, loss) < 1e-6);
}

TEST_CASE("learned upsampling gradients") {
  std::mt19937_64 rng(3);
  for (auto [k, s] : {std::pair{4, 2}, std::pair{5, 4}, std::pair{3, 2}}) {
    const int cin = 2, cout = 3;
    auto in = random_tensor(cin, 3, 4, rng);
    RowMatrix<D> w = RowMatrix<D>::Random(cin, cout * k * k);
    const auto r = random_vector(static_cast<std::size_t>(cout) * 3 * s * 4 * s, rng);
    auto loss = [&] {
      Tensor<D> out;
      layers::upsample_forward<D>(in, w, cout, k, s, out);
      return dot(out.data, r);
    };
    Tensor<D> out;
    layers::upsample_forward<D>(in, w, cout, k, s, out);
    CHECK(out.height == 3 * s);
    CHECK(out.width == 4 * s);
    Tensor<D> gout(cout, out.height, out.width);
    gout.data = r;
    RowMatrix<D> gw = RowMatrix<D>::Zero(cin, cout * k * k);
    Tensor<D> gin;
    layers::upsample_backward<D>(in, w, k, s, gout, gw, &gin);
    CHECK(fd_check(in.data, gin.data, loss) < 1e-6);
    AlignedVector<D> wv(w.data(), w.data() + w.size());
    AlignedVector<D> gwv(gw.data(), gw.data() + gw.size());
    auto loss_w = [&] {
      std::copy(wv.begin(), wv.end(), w.data());
      return loss();
    };
    CHECK(fd_check(wv, gwv, loss_w) < 1e-6);
  }
}

TEST_CASE("softmax cross-entropy gradient") {
  std::mt19937_64 rng(4);
  auto logits = random_tensor(4, 3, 3, rng);
  const auto labels = random_labels(9, 4, rng);
  auto loss = [&] {
    Tensor<D> g;
    return layers::softmax_xent<D>(logits, labels, 1.0, g);
  };
  Tensor<D> g;
  layers::softmax_xent<D>(logits, labels, 1.0, g);
  CHECK(fd_check(logits.data, g.data, loss) < 1e-6);
}

TEST_CASE("whole-network gradients match central differences") {
  std::mt19937_64 rng(5);
  const auto topo = tiny_topology();
  FcnNetwork<D> net(topo, 9);
  // Push the heads away from their small initialization so every path
  // carries signal.
  for (auto& p : net.params())
    for (auto& v : p.values) v += 0.2 * std::normal_distribution<D>(0, 1)(rng);
  const auto input = random_tensor(1, 16, 16, rng);
  const auto labels = random_labels(256, topo.classes, rng);
  auto loss = [&] {
    FcnWorkspace<D> ws;
    net.forward(input, ws);
    Tensor<D> g;
    return layers::softmax_xent<D>(ws.logits, labels, 1.0, g);
  };
  FcnWorkspace<D> ws;
  net.forward(input, ws);
  auto grads = net.zero_like();
  const D l = net.backward(labels, 1.0, ws, grads);
  CHECK(l == doctest::Approx(loss()).epsilon(1e-12));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    CAPTURE(net.params()[p].name);
    CHECK(fd_check(net.params()[p].values, grads[p].values, loss) < 1e-4);
  }
}

TEST_CASE("zero weights give a uniform distribution") {
  auto topo = tiny_topology();
  topo.classes = 44;
  FcnNetwork<float> net(topo, 1);
  for (auto& p : net.params()) std::fill(p.values.begin(), p.values.end(), 0.0f);
  std::mt19937_64 rng(6);
  Tensor<float> in(1, 16, 16);
  for (auto& v : in.data) v = std::normal_distribution<float>(0, 1)(rng);
  FcnWorkspace<float> ws;
  net.forward(in, ws);
  layers::softmax(ws.logits);
  for (float v : ws.logits.data) CHECK(v == doctest::Approx(1.0 / 44).epsilon(1e-6));
}

TEST_CASE("softmax channel sums are one") {
  FcnNetwork<float> net(tiny_topology(), 3);
  std::mt19937_64 rng(7);
  for (auto& p : net.params())
    for (auto& v : p.values) v = std::normal_distribution<float>(0, 1)(rng);
  Tensor<float> in(1, 16, 16);
  for (auto& v : in.data) v = std::normal_distribution<float>(0, 1)(rng);
  FcnWorkspace<float> ws;
  net.forward(in, ws);
  layers::softmax(ws.logits);
  for (int p = 0; p < ws.logits.plane(); ++p) {
    double s = 0;
    for (int c = 0; c < ws.logits.channels; ++c) s += ws.logits.data[static_cast<std::size_t>(c) * ws.logits.plane() + p];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("coarse scores are equivariant to stride-sized translations") {
  auto topo = tiny_topology();
  topo.input_size = 64;
  FcnNetwork<D> net(topo, 4);
  std::mt19937_64 rng(8);
  const int S = 64, stride = topo.coarse_stride();
  const auto in = random_tensor(1, S, S, rng);
  Tensor<D> shifted(1, S, S);
  for (int y = 0; y < S; ++y)
    for (int x = stride; x < S; ++x) shifted.at(0, y, x) = in.at(0, y, x - stride);
  FcnWorkspace<D> a, b;
  net.forward(in, a);
  net.forward(shifted, b);
  const auto& ca = a.scores[0];
  const auto& cb = b.scores[0];
  const int margin = 3;
  D worst = 0;
  for (int c = 0; c < ca.channels; ++c)
    for (int y = margin; y < ca.height - margin; ++y)
      for (int x = margin; x + 1 < ca.width - margin; ++x) worst = std::max(worst, std::abs(cb.at(c, y, x + 1) - ca.at(c, y, x)));
  CHECK(worst < 1e-12);
}

TEST_CASE("float and double networks agree") {
  const FcnModel model(tiny_topology(), 12);
  const auto dbl = model.cast<double>();
  std::mt19937_64 rng(9);
  Tensor<float> in(1, 16, 16);
  for (auto& v : in.data) v = std::normal_distribution<float>(0, 1)(rng);
  Tensor<D> ind(1, 16, 16);
  std::copy(in.data.begin(), in.data.end(), ind.data.begin());
  FcnWorkspace<float> wf;
  FcnWorkspace<D> wd;
  model.forward(in, wf);
  dbl.forward(ind, wd);
  for (std::size_t i = 0; i < wf.logits.data.size(); ++i) CHECK(std::abs(wf.logits.data[i] - wd.logits.data[i]) < 1e-4);
}

TEST_CASE("repeating one batch drives the loss down") {
  const auto cfg = DatasetConfig::with_resolution(64);
  const auto chars = build_character_pool(Stage::Easy, 1);
  const auto ids = cfg.postures.ids(Split::Train, false);
  FcnTopology topo;
  topo.input_size = 32;
  topo.block_channels = {8, 16};
  topo.convs_per_block = 1;
  topo.fusion_stages = 1;
  topo.final_kernel = 3;
  std::vector<TrainingExample> batch;
  for (std::uint64_t s = 0; s < 2; ++s) {
    const auto smp = sample(chars, cfg.range, cfg.postures, ids, 1, s);
    batch.push_back(make_training_example(smp.views[0].depth, smp.views[0].labels, 32));
  }
  FcnModel model(topo, 2);
  SgdState state;
  const SgdConfig sgd{0.5, 0.9, 1.0};
  const double first = fcn_backward_step(model, batch, sgd, state);
  double last = first;
  for (int i = 1; i < 200; ++i) last = fcn_backward_step(model, batch, sgd, state);
  MESSAGE("loss " << first << " -> " << last);
  CHECK(last <= 0.1 * first);
}

TEST_CASE("zero learning rate leaves the model unchanged") {
  const auto topo = tiny_topology();
  FcnModel model(topo, 5);
  const auto before = model.params();
  std::mt19937_64 rng(1);
  TrainingExample ex{Tensor<float>(1, 16, 16), random_labels(256, topo.classes, rng)};
  for (auto& v : ex.input.data) v = std::normal_distribution<float>(0, 1)(rng);
  SgdState state;
  const std::vector<TrainingExample> batch{ex};
  for (int i = 0; i < 3; ++i) fcn_backward_step(model, batch, SgdConfig{0.0, 0.9, 0.0}, state);
  for (std::size_t p = 0; p < before.size(); ++p) CHECK(model.params()[p].values == before[p].values);
}

TEST_CASE("model file round trip") {
  test::TempDir dir("fcn");
  const FcnModel model(tiny_topology(), 77);
  save_fcn(dir.path() / "m.mvdm", model);
  const auto back = load_fcn(dir.path() / "m.mvdm");
  CHECK(back.topology() == model.topology());
  REQUIRE(back.params().size() == model.params().size());
  for (std::size_t p = 0; p < back.params().size(); ++p) {
    CHECK(back.params()[p].name == model.params()[p].name);
    CHECK(back.params()[p].shape == model.params()[p].shape);
    CHECK(back.params()[p].values == model.params()[p].values);
  }
  CHECK_THROWS_AS(load_fcn(dir.path() / "missing.mvdm"), Error);
}

}  // TEST_SUITE
