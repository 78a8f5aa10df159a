#include "mvdp/dense_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mvdp/bytes.hpp"
#include "mvdp/error.hpp"
#include "mvdp/parallel.hpp"
#include "mvdp/random.hpp"

namespace mvdp {

int window_margin(int size) { return static_cast<int>(std::lround(30.0 * size / 250.0)); }

namespace {

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

}  // namespace

NormalizedDepthImage preprocess(const DepthFrame& depth, int size) {
  const int W = depth.width;
  const int H = depth.height;
  int x0 = W, x1 = -1, y0 = H, y1 = -1;
  double depth_sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (!depth.is_foreground(x, y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      depth_sum += dequantize_depth(depth.at(x, y));
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorCode::EmptyForeground, "depth frame has no foreground pixels");

  NormalizedDepthImage img;
  img.size = size;
  img.margin = window_margin(size);
  if (size - 2 * img.margin < 1) throw Error(ErrorCode::InvalidArgument, "window too small for its margin");
  img.source_width = W;
  img.source_height = H;
  img.level_shift = round_half_up((kTargetDepth - depth_sum / static_cast<double>(count)) / kQuantizationStep);

  const int extent = std::max(x1 - x0 + 1, y1 - y0 + 1);
  img.scale = static_cast<double>(size - 2 * img.margin) / extent;
  const Vec2 center(0.5 * (x0 + x1), 0.5 * (y0 + y1));
  img.offset = Vec2::Constant(0.5 * (size - 1)) - img.scale * center;

  auto shifted = [&](std::uint8_t level) {
    return static_cast<std::uint8_t>(std::clamp(level + img.level_shift, 0, static_cast<int>(kMaxDepthLevel)));
  };

  const auto plane = static_cast<std::size_t>(size) * size;
  img.levels.assign(plane, kBackgroundLevel);
  img.window_to_source.assign(plane, -1);
  img.source_to_window.assign(static_cast<std::size_t>(W) * H, -1);

  for (int wy = 0; wy < size; ++wy) {
    for (int wx = 0; wx < size; ++wx) {
      const Vec2 src = img.to_source(Vec2(wx, wy));
      const int sx = round_half_up(src.x());
      const int sy = round_half_up(src.y());
      if (sx < 0 || sy < 0 || sx >= W || sy >= H || !depth.is_foreground(sx, sy)) continue;
      const auto w = static_cast<std::size_t>(wy) * size + wx;
      img.levels[w] = shifted(depth.at(sx, sy));
      img.window_to_source[w] = sy * W + sx;
    }
  }
  // Every source foreground pixel gets a window pixel; when downscaling, a
  // pixel whose forward image was sampled as background claims it.
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (!depth.is_foreground(x, y)) continue;
      const Vec2 w = img.to_window(Vec2(x, y));
      const int wx = std::clamp(round_half_up(w.x()), 0, size - 1);
      const int wy = std::clamp(round_half_up(w.y()), 0, size - 1);
      const int wi = wy * size + wx;
      img.source_to_window[static_cast<std::size_t>(y) * W + x] = wi;
      if (img.window_to_source[static_cast<std::size_t>(wi)] < 0) {
        img.window_to_source[static_cast<std::size_t>(wi)] = y * W + x;
        img.levels[static_cast<std::size_t>(wi)] = shifted(depth.at(x, y));
      }
    }
  }
  return img;
}

std::vector<std::uint8_t> warp_labels(const NormalizedDepthImage& img, const DepthFrame& depth,
                                      const LabelFrame& labels) {
  if (labels.width != depth.width || labels.height != depth.height || depth.width != img.source_width ||
      depth.height != img.source_height) {
    throw Error(ErrorCode::ShapeMismatch, "label frame does not match the preprocessed depth frame");
  }
  std::vector<std::uint8_t> out(img.window_to_source.size(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto s = img.window_to_source[i];
    if (s >= 0) out[i] = labels.labels[static_cast<std::size_t>(s)];
  }
  return out;
}

Tensor<float> network_input(const NormalizedDepthImage& img) {
  static const float center = quantize_depth(kTargetDepth);
  Tensor<float> t(1, img.size, img.size);
  for (std::size_t i = 0; i < img.levels.size(); ++i) {
    t.data[i] = std::clamp((static_cast<float>(img.levels[i]) - center) / 17.0f, -3.0f, 3.0f);
  }
  return t;
}

LabelFrame ProbabilityMap::argmax() const {
  LabelFrame out(width, height);
  const std::size_t n = static_cast<std::size_t>(width) * height;
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = values.data() + i * static_cast<std::size_t>(channels);
    out.labels[i] = static_cast<std::uint8_t>(std::max_element(p, p + channels) - p);
  }
  return out;
}

ProbabilityMap fcn_forward(const FcnModel& model, const NormalizedDepthImage& img) {
  const auto& t = model.topology();
  if (img.size != t.input_size) {
    throw Error(ErrorCode::ShapeMismatch, "image size " + std::to_string(img.size) + " != model input size " +
                                              std::to_string(t.input_size));
  }
  const Tensor<float> input = network_input(img);
  FcnWorkspace<float> ws;
  model.forward(input, ws);
  layers::softmax(ws.logits);
  ProbabilityMap out(img.size, img.size, t.classes);
  Eigen::Map<RowMatrix<float>>(out.values.data(), ws.logits.plane(), t.classes) = ws.logits.matrix().transpose();
  return out;
}

// ---------------------------------------------------------------------------

OracleClassifier::OracleClassifier(int classes, double noise_rate) : classes_(classes), noise_rate_(noise_rate) {
  if (classes < 2) throw Error(ErrorCode::InvalidArgument, "oracle needs at least two classes");
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw Error(ErrorCode::InvalidArgument, "noise rate must be in [0, 1]");
}

ProbabilityMap OracleClassifier::classify(const DepthFrame& depth, const LabelFrame* groundtruth,
                                          std::uint64_t seed) const {
  if (groundtruth == nullptr) throw Error(ErrorCode::InvalidArgument, "oracle classifier needs groundtruth labels");
  if (groundtruth->width != depth.width || groundtruth->height != depth.height) {
    throw Error(ErrorCode::ShapeMismatch, "groundtruth does not match the depth frame");
  }
  if (depth.foreground_count() == 0) throw Error(ErrorCode::EmptyForeground, "depth frame has no foreground pixels");
  ProbabilityMap out(depth.width, depth.height, classes_);
  Rng rng(seed);
  const std::size_t n = depth.levels.size();
  for (std::size_t i = 0; i < n; ++i) {
    int label = 0;
    if (depth.levels[i] != kBackgroundLevel) {
      label = groundtruth->labels[i];
      if (noise_rate_ > 0.0 && rng.uniform01() < noise_rate_) {
        label = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(classes_ - 1)));
      }
      if (label >= classes_) throw Error(ErrorCode::ShapeMismatch, "groundtruth label exceeds class count");
    }
    out.values[i * static_cast<std::size_t>(classes_) + static_cast<std::size_t>(label)] = 1.0f;
  }
  return out;
}

FcnClassifier::FcnClassifier(std::shared_ptr<const FcnModel> model) : model_(std::move(model)) {
  if (!model_) throw Error(ErrorCode::InvalidArgument, "null classifier model");
}

int FcnClassifier::classes() const { return model_->topology().classes; }

ProbabilityMap FcnClassifier::classify(const DepthFrame& depth, const LabelFrame*, std::uint64_t) const {
  const auto img = preprocess(depth, model_->topology().input_size);
  const auto window = fcn_forward(*model_, img);
  const int C = classes();
  ProbabilityMap out(depth.width, depth.height, C);
  for (std::size_t i = 0; i < img.source_to_window.size(); ++i) {
    float* dst = out.values.data() + i * static_cast<std::size_t>(C);
    const auto w = img.source_to_window[i];
    if (w < 0) {
      dst[0] = 1.0f;
      continue;
    }
    const float* src = window.values.data() + static_cast<std::size_t>(w) * static_cast<std::size_t>(C);
    std::copy(src, src + C, dst);
  }
  return out;
}

// ---------------------------------------------------------------------------

AccuracyAccumulator::AccuracyAccumulator(int classes)
    : correct_(static_cast<std::size_t>(classes), 0), total_(static_cast<std::size_t>(classes), 0) {}

void AccuracyAccumulator::add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> groundtruth) {
  if (predicted.size() != groundtruth.size()) throw Error(ErrorCode::ShapeMismatch, "prediction/groundtruth size differ");
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto g = groundtruth[i];
    if (g == 0) continue;
    if (g >= total_.size()) throw Error(ErrorCode::ShapeMismatch, "groundtruth label exceeds class count");
    ++total_[g];
    if (predicted[i] == g) ++correct_[g];
  }
}

void AccuracyAccumulator::add(const LabelFrame& predicted, const LabelFrame& groundtruth) {
  if (predicted.width != groundtruth.width || predicted.height != groundtruth.height) {
    throw Error(ErrorCode::ShapeMismatch, "prediction/groundtruth shapes differ");
  }
  add(predicted.labels, groundtruth.labels);
}

double AccuracyAccumulator::recall(int cls) const {
  const auto t = total_[static_cast<std::size_t>(cls)];
  return t == 0 ? 0.0 : static_cast<double>(correct_[static_cast<std::size_t>(cls)]) / static_cast<double>(t);
}

double AccuracyAccumulator::average() const {
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 1; c < total_.size(); ++c) {
    if (total_[c] == 0) continue;
    sum += recall(static_cast<int>(c));
    ++present;
  }
  return present == 0 ? 0.0 : sum / present;
}

double avg_per_class_accuracy(const LabelFrame& predicted, const LabelFrame& groundtruth) {
  AccuracyAccumulator acc(256);
  acc.add(predicted, groundtruth);
  return acc.average();
}

// ---------------------------------------------------------------------------

TrainingExample make_training_example(const DepthFrame& depth, const LabelFrame& labels, int size) {
  const auto img = preprocess(depth, size);
  return {network_input(img), warp_labels(img, depth, labels)};
}

namespace {

bool all_finite(const std::vector<ParamTensor<float>>& ps) {
  for (const auto& p : ps) {
    for (float v : p.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

double fcn_backward_step(FcnModel& model, std::span<const TrainingExample> batch, const SgdConfig& cfg,
                         SgdState& state) {
  if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "empty training batch");
  const int S = model.topology().input_size;
  const auto pixels = static_cast<double>(batch.size()) * S * S;
  const auto scale = static_cast<float>(1.0 / pixels);

  std::vector<std::vector<ParamTensor<float>>> grads(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  const FcnModel& frozen = model;
  parallel_for(batch.size(), [&](std::size_t i) {
    FcnWorkspace<float> ws;
    frozen.forward(batch[i].input, ws);
    grads[i] = frozen.zero_like();
    losses[i] = frozen.backward(batch[i].labels, scale, ws, grads[i]);
  });
  double loss = 0.0;
  for (double l : losses) loss += l;
  loss /= pixels;
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "training loss is not finite; reduce the learning rate");

  auto& total = grads[0];
  for (std::size_t i = 1; i < grads.size(); ++i) {
    for (std::size_t p = 0; p < total.size(); ++p) {
      auto& dst = total[p].values;
      const auto& src = grads[i][p].values;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  if (!all_finite(total)) throw Error(ErrorCode::NonFiniteLoss, "gradient is not finite; reduce the learning rate");
  float grad_scale = 1.0f;
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : total) {
      for (float g : p.values) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) grad_scale = static_cast<float>(cfg.clip_norm / norm);
  }

  if (state.velocity.empty()) state.velocity = model.zero_like();
  const auto mu = static_cast<float>(cfg.momentum);
  const auto lr = static_cast<float>(cfg.learning_rate) * grad_scale;
  auto& params = model.params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p].values;
    auto& v = state.velocity[p].values;
    const auto& g = total[p].values;
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = mu * v[k] - lr * g[k];
      w[k] += v[k];
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------

namespace {

/// Evaluates images [first, first + count) in container order, in chunks so
/// the reader stays single-threaded while inference runs in parallel.
void accumulate_accuracy(const FcnModel& model, DatasetReader& reader, std::size_t count, AccuracyAccumulator& acc) {
  const int n_views = reader.header().n_cameras;
  const int S = model.topology().input_size;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t end = std::min(count, start + kChunk);
    std::vector<RenderedView> views;
    std::size_t cached = SIZE_MAX;
    Sample s;
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t si = i / static_cast<std::size_t>(n_views);
      if (si != cached) {
        s = reader.read(si);
        cached = si;
      }
      views.push_back(s.views[i % static_cast<std::size_t>(n_views)]);
    }
    std::vector<std::vector<std::uint8_t>> pred(views.size());
    std::vector<std::vector<std::uint8_t>> truth(views.size());
    parallel_for(views.size(), [&](std::size_t i) {
      if (views[i].depth.foreground_count() == 0) return;
      const auto img = preprocess(views[i].depth, S);
      pred[i] = fcn_forward(model, img).argmax().labels;
      truth[i] = warp_labels(img, views[i].depth, views[i].labels);
    });
    for (std::size_t i = 0; i < views.size(); ++i) acc.add(pred[i], truth[i]);
  }
}

std::size_t image_count(DatasetReader& reader) {
  return reader.size() * static_cast<std::size_t>(reader.header().n_cameras);
}

}  // namespace

double evaluate_classifier(const FcnModel& model, const std::filesystem::path& container, std::size_t limit) {
  DatasetReader reader(container);
  std::size_t count = image_count(reader);
  if (limit > 0) count = std::min(count, limit);
  AccuracyAccumulator acc(model.topology().classes);
  accumulate_accuracy(model, reader, count, acc);
  return acc.average();
}

CurriculumResult train_curriculum(std::span<const CurriculumStage> schedule, const CurriculumOptions& options,
                                  const FcnModel* initial) {
  if (schedule.empty()) throw Error(ErrorCode::InvalidStage, "curriculum needs at least one stage");
  for (const auto& st : schedule) {
    if (st.iterations <= 0 || st.batch_size <= 0 || !(st.learning_rate >= 0.0)) {
      throw Error(ErrorCode::InvalidStage, "stage '" + st.name + "' needs a positive budget and batch size");
    }
  }
  CurriculumResult result{initial != nullptr ? *initial : FcnModel(options.topology, options.seed), {}};
  FcnModel& model = result.model;
  const int S = model.topology().input_size;
  auto report = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };
  auto validate = [&](std::size_t stage_index, std::size_t which, int iteration) {
    const auto& vs = schedule[which];
    const double a = evaluate_classifier(model, vs.validation, options.validation_limit);
    result.log.push_back({schedule[stage_index].name, iteration, vs.validation.stem().string(), a});
    std::ostringstream msg;
    msg << "stage " << schedule[stage_index].name << " iteration " << iteration << " " << vs.validation.stem().string()
        << " accuracy " << a;
    report(msg.str());
  };

  int global = 0;
  for (std::size_t si = 0; si < schedule.size(); ++si) {
    const auto& st = schedule[si];
    DatasetReader reader(st.train);
    const std::size_t images = image_count(reader);
    if (images == 0) throw Error(ErrorCode::EmptyPool, "training container " + st.train.string() + " is empty");
    const int n_views = reader.header().n_cameras;

    validate(si, si, global);

    SgdState state;
    std::vector<std::size_t> order(images);
    std::size_t cursor = images;
    std::uint64_t epoch = 0;
    const std::uint64_t stage_seed = derive_seed(options.seed, 0x5747 + si);
    auto next_image = [&]() {
      if (cursor == images) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(stage_seed, epoch++));
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      return order[cursor++];
    };

    double running = 0.0;
    for (int it = 0; it < st.iterations; ++it) {
      std::vector<TrainingExample> batch;
      batch.reserve(static_cast<std::size_t>(st.batch_size));
      std::size_t attempts = 0;
      while (batch.size() < static_cast<std::size_t>(st.batch_size)) {
        if (++attempts > images + static_cast<std::size_t>(st.batch_size)) {
          throw Error(ErrorCode::EmptyPool, "training container has no foreground images");
        }
        const std::size_t idx = next_image();
        const Sample s = reader.read(idx / static_cast<std::size_t>(n_views));
        const auto& v = s.views[idx % static_cast<std::size_t>(n_views)];
        if (v.depth.foreground_count() == 0) continue;
        batch.push_back(make_training_example(v.depth, v.labels, S));
      }
      SgdConfig cfg{st.learning_rate, options.momentum, options.clip_norm};
      if (st.lr_step > 0) cfg.learning_rate *= std::pow(st.lr_gamma, it / st.lr_step);
      if (it < st.warmup) cfg.learning_rate *= static_cast<double>(it + 1) / (st.warmup + 1);
      const double loss = fcn_backward_step(model, batch, cfg, state);
      running = it == 0 ? loss : 0.98 * running + 0.02 * loss;
      ++global;
      if ((it + 1) % 50 == 0 || it + 1 == st.iterations) {
        std::ostringstream msg;
        msg << "stage " << st.name << " iteration " << it + 1 << "/" << st.iterations << " loss " << running
            << " lr " << cfg.learning_rate;
        report(msg.str());
      }
      if (options.eval_every > 0 && (it + 1) % options.eval_every == 0 && it + 1 < st.iterations) {
        validate(si, si, global);
      }
    }
    for (std::size_t prev = 0; prev <= si; ++prev) validate(si, prev, global);
  }
  return result;
}

void write_accuracy_log(const std::filesystem::path& path, std::span<const AccuracyLogEntry> log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "stage,iteration,split,accuracy\n";
  out.precision(6);
  out << std::fixed;
  for (const auto& e : log) out << e.stage << ',' << e.iteration << ',' << e.split << ',' << e.accuracy << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------

ModelChunk fcn_to_chunk(const FcnModel& model) {
  const auto& t = model.topology();
  detail::ByteSink s;
  s.i32(t.input_size);
  s.i32(t.classes);
  s.i32(t.blocks());
  for (int c : t.block_channels) s.i32(c);
  s.i32(t.convs_per_block);
  s.i32(t.kernel);
  s.i32(t.fusion_stages);
  s.i32(t.fusion_kernel);
  s.i32(t.final_kernel);
  s.u32(static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    s.str(p.name);
    s.u8(static_cast<std::uint8_t>(p.shape.size()));
    for (int d : p.shape) s.i32(d);
    for (float v : p.values) s.f32(v);
  }
  ModelChunk c;
  c.type = {'F', 'C', 'N', 'T'};
  c.payload = std::move(s.bytes());
  return c;
}

FcnModel fcn_from_chunk(const ModelChunk& chunk) {
  if (!chunk.is("FCNT")) throw Error(ErrorCode::FormatError, "not a classifier chunk");
  detail::ByteSource src(chunk.payload);
  FcnTopology t;
  t.input_size = src.i32();
  t.classes = src.i32();
  const int blocks = src.i32();
  if (blocks < 1 || blocks > 16) throw Error(ErrorCode::FormatError, "implausible block count");
  t.block_channels.resize(static_cast<std::size_t>(blocks));
  for (auto& c : t.block_channels) c = src.i32();
  t.convs_per_block = src.i32();
  t.kernel = src.i32();
  t.fusion_stages = src.i32();
  t.fusion_kernel = src.i32();
  t.final_kernel = src.i32();
  try {
    t.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::FormatError, std::string("stored topology is invalid: ") + e.what());
  }
  FcnModel model(t, 0);
  const auto count = src.u32();
  if (count != model.params().size()) throw Error(ErrorCode::FormatError, "parameter count does not match topology");
  for (auto& p : model.params()) {
    const auto name = src.str();
    const auto ndim = src.u8();
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = src.i32();
    if (name != p.name || shape != p.shape) throw Error(ErrorCode::FormatError, "unexpected parameter " + name);
    for (auto& v : p.values) v = src.f32();
  }
  if (!src.done()) throw Error(ErrorCode::FormatError, "trailing bytes in classifier chunk");
  return model;
}

void save_fcn(const std::filesystem::path& path, const FcnModel& model) {
  const ModelChunk chunk = fcn_to_chunk(model);
  write_model_file(path, std::span<const ModelChunk>(&chunk, 1));
}

FcnModel load_fcn(const std::filesystem::path& path) {
  const auto chunks = read_model_file(path);
  return fcn_from_chunk(find_chunk(chunks, "FCNT"));
}

}  // namespace mvdp
