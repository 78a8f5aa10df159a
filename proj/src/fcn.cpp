#include "mvdp/fcn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mvdp/error.hpp"
#include "mvdp/random.hpp"

namespace mvdp {

void FcnTopology::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, "fcn topology: " + what); };
  if (block_channels.empty()) fail("need at least one block");
  for (int c : block_channels) {
    if (c < 1) fail("channel counts must be positive");
  }
  if (classes < 2) fail("need at least two classes");
  if (convs_per_block < 1) fail("need at least one conv per block");
  if (kernel < 1 || kernel % 2 == 0) fail("conv kernel must be odd");
  if (input_size < 1 || input_size % coarse_stride() != 0) fail("input size must be divisible by 2^blocks");
  if (fusion_stages < 0 || fusion_stages >= blocks()) fail("fusion stages must be in [0, blocks)");
  if (fusion_stages > 0 && fusion_kernel < 2) fail("fusion kernel must be at least the 2x stride");
  if (final_kernel % 2 == 0) fail("final kernel must be odd");
  if (final_kernel < final_factor()) fail("final kernel must cover the final upsampling factor");
}

namespace layers {

namespace {

template <typename T>
void im2col(const Tensor<T>& in, int k, Tensor<T>& cols) {
  const int H = in.height;
  const int W = in.width;
  const int pad = k / 2;
  cols.channels = in.channels * k * k;
  cols.height = H;
  cols.width = W;
  cols.data.resize(static_cast<std::size_t>(cols.channels) * H * W);
  T* dst = cols.data.data();
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.data.data() + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(W, W - dx);
        for (int y = 0; y < H; ++y, dst += W) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, T(0));
            continue;
          }
          const T* row = src + static_cast<std::size_t>(sy) * W;
          std::fill(dst, dst + x0, T(0));
          for (int x = x0; x < x1; ++x) dst[x] = row[x + dx];
          std::fill(dst + std::max(x1, x0), dst + W, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const Tensor<T>& cols, int channels, int k, Tensor<T>& out) {
  const int H = cols.height;
  const int W = cols.width;
  const int pad = k / 2;
  out = Tensor<T>(channels, H, W);
  const T* src = cols.data.data();
  for (int c = 0; c < channels; ++c) {
    T* plane = out.data.data() + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(W, W - dx);
        for (int y = 0; y < H; ++y, src += W) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          T* row = plane + static_cast<std::size_t>(sy) * W;
          for (int x = x0; x < x1; ++x) row[x + dx] += src[x];
        }
      }
    }
  }
}

int upsample_crop(int kernel, int stride) { return (kernel - stride) / 2; }

}  // namespace

template <typename T>
void conv_forward(const Tensor<T>& in, ConstMatRef<T> weight, std::span<const T> bias, int kernel, Tensor<T>& cols,
                  Tensor<T>& out) {
  if (weight.cols() != in.channels * kernel * kernel) {
    throw Error(ErrorCode::ShapeMismatch, "conv weight does not match input channels");
  }
  im2col(in, kernel, cols);
  const int out_channels = static_cast<int>(weight.rows());
  if (out.channels != out_channels || out.height != in.height || out.width != in.width) {
    out = Tensor<T>(out_channels, in.height, in.width);
  }
  auto o = out.matrix();
  o.noalias() = weight * cols.matrix();
  o.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data(), out_channels);
}

template <typename T>
void conv_backward(const Tensor<T>& cols, const Tensor<T>& in, ConstMatRef<T> weight, int kernel,
                   const Tensor<T>& grad_out, MatRef<T> grad_weight, std::span<T> grad_bias, Tensor<T>* grad_in) {
  const auto g = grad_out.matrix();
  grad_weight.noalias() += g * cols.matrix().transpose();
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grad_bias.data(), g.rows()) += g.rowwise().sum();
  if (grad_in != nullptr) {
    Tensor<T> dcols(cols.channels, cols.height, cols.width);
    dcols.matrix().noalias() = weight.transpose() * g;
    col2im(dcols, in.channels, kernel, *grad_in);
  }
}

template <typename T>
void relu_forward(Tensor<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& out, Tensor<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(out.data[i] > T(0))) grad.data[i] = T(0);
  }
}

template <typename T>
void maxpool_forward(const Tensor<T>& in, Tensor<T>& out, std::vector<std::int32_t>& argmax) {
  const int H = in.height / 2;
  const int W = in.width / 2;
  if (out.channels != in.channels || out.height != H || out.width != W) out = Tensor<T>(in.channels, H, W);
  argmax.resize(out.data.size());
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        int best = -1;
        T best_v = -std::numeric_limits<T>::infinity();
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (c * in.height + 2 * y + dy) * in.width + 2 * x + dx;
            if (in.data[static_cast<std::size_t>(idx)] > best_v || best < 0) {
              best_v = in.data[static_cast<std::size_t>(idx)];
              best = idx;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * H + y) * W + x;
        out.data[o] = best_v;
        argmax[o] = best;
      }
    }
  }
}

template <typename T>
void maxpool_backward(const Tensor<T>& grad_out, const std::vector<std::int32_t>& argmax, Tensor<T>& grad_in) {
  std::fill(grad_in.data.begin(), grad_in.data.end(), T(0));
  for (std::size_t i = 0; i < grad_out.data.size(); ++i) {
    grad_in.data[static_cast<std::size_t>(argmax[i])] += grad_out.data[i];
  }
}

template <typename T>
void upsample_forward(const Tensor<T>& in, ConstMatRef<T> weight, int out_channels, int kernel, int stride,
                      Tensor<T>& out) {
  if (weight.rows() != in.channels || weight.cols() != out_channels * kernel * kernel) {
    throw Error(ErrorCode::ShapeMismatch, "upsampling weight does not match its input");
  }
  const int H = in.height * stride;
  const int W = in.width * stride;
  const int crop = upsample_crop(kernel, stride);
  const RowMatrix<T> cols = weight.transpose() * in.matrix();
  out = Tensor<T>(out_channels, H, W);
  for (int c = 0; c < out_channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const T* src = cols.data() + static_cast<std::size_t>((c * kernel + ky) * kernel + kx) * in.plane();
        for (int iy = 0; iy < in.height; ++iy) {
          const int oy = iy * stride + ky - crop;
          if (oy < 0 || oy >= H) continue;
          T* row = out.data.data() + (static_cast<std::size_t>(c) * H + oy) * W;
          for (int ix = 0; ix < in.width; ++ix) {
            const int ox = ix * stride + kx - crop;
            if (ox >= 0 && ox < W) row[ox] += src[iy * in.width + ix];
          }
        }
      }
    }
  }
}

template <typename T>
void upsample_backward(const Tensor<T>& in, ConstMatRef<T> weight, int kernel, int stride, const Tensor<T>& grad_out,
                       MatRef<T> grad_weight, Tensor<T>* grad_in) {
  const int out_channels = grad_out.channels;
  const int H = grad_out.height;
  const int W = grad_out.width;
  const int crop = upsample_crop(kernel, stride);
  RowMatrix<T> dcols = RowMatrix<T>::Zero(out_channels * kernel * kernel, in.plane());
  for (int c = 0; c < out_channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        T* dst = dcols.data() + static_cast<std::size_t>((c * kernel + ky) * kernel + kx) * in.plane();
        for (int iy = 0; iy < in.height; ++iy) {
          const int oy = iy * stride + ky - crop;
          if (oy < 0 || oy >= H) continue;
          const T* row = grad_out.data.data() + (static_cast<std::size_t>(c) * H + oy) * W;
          for (int ix = 0; ix < in.width; ++ix) {
            const int ox = ix * stride + kx - crop;
            if (ox >= 0 && ox < W) dst[iy * in.width + ix] = row[ox];
          }
        }
      }
    }
  }
  grad_weight.noalias() += in.matrix() * dcols.transpose();
  if (grad_in != nullptr) {
    *grad_in = Tensor<T>(in.channels, in.height, in.width);
    grad_in->matrix().noalias() = weight * dcols;
  }
}

template <typename T>
void softmax(Tensor<T>& logits) {
  const int C = logits.channels;
  const int N = logits.plane();
  auto m = logits.matrix();
  for (int p = 0; p < N; ++p) {
    const T mx = m.col(p).maxCoeff();
    T sum = 0;
    for (int c = 0; c < C; ++c) {
      const T e = std::exp(m(c, p) - mx);
      m(c, p) = e;
      sum += e;
    }
    for (int c = 0; c < C; ++c) m(c, p) /= sum;
  }
}

template <typename T>
double softmax_xent(const Tensor<T>& logits, std::span<const std::uint8_t> labels, T loss_scale, Tensor<T>& grad) {
  const int C = logits.channels;
  const int N = logits.plane();
  if (labels.size() != static_cast<std::size_t>(N)) throw Error(ErrorCode::ShapeMismatch, "label count != pixels");
  grad = logits;
  softmax(grad);
  auto g = grad.matrix();
  double loss = 0.0;
  for (int p = 0; p < N; ++p) {
    const int label = labels[static_cast<std::size_t>(p)];
    if (label >= C) throw Error(ErrorCode::ShapeMismatch, "label exceeds class count");
    loss -= std::log(std::max(static_cast<double>(g(label, p)), 1e-300));
    g(label, p) -= T(1);
  }
  g *= loss_scale;
  return loss;
}

#define MVDP_INSTANTIATE_LAYERS(T)                                                                                \
  template void conv_forward<T>(const Tensor<T>&, ConstMatRef<T>, std::span<const T>, int, Tensor<T>&,          \
                                Tensor<T>&);                                                                      \
  template void conv_backward<T>(const Tensor<T>&, const Tensor<T>&, ConstMatRef<T>, int, const Tensor<T>&,     \
                                 MatRef<T>, std::span<T>, Tensor<T>*);                                            \
  template void relu_forward<T>(Tensor<T>&);                                                                      \
  template void relu_backward<T>(const Tensor<T>&, Tensor<T>&);                                                   \
  template void maxpool_forward<T>(const Tensor<T>&, Tensor<T>&, std::vector<std::int32_t>&);                     \
  template void maxpool_backward<T>(const Tensor<T>&, const std::vector<std::int32_t>&, Tensor<T>&);              \
  template void upsample_forward<T>(const Tensor<T>&, ConstMatRef<T>, int, int, int, Tensor<T>&);                 \
  template void upsample_backward<T>(const Tensor<T>&, ConstMatRef<T>, int, int, const Tensor<T>&, MatRef<T>,   \
                                     Tensor<T>*);                                                                 \
  template double softmax_xent<T>(const Tensor<T>&, std::span<const std::uint8_t>, T, Tensor<T>&);               \
  template void softmax<T>(Tensor<T>&);

MVDP_INSTANTIATE_LAYERS(float)
MVDP_INSTANTIATE_LAYERS(double)
#undef MVDP_INSTANTIATE_LAYERS

}  // namespace layers

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Eigen::Map<RowMatrix<T>> as_matrix(ParamTensor<T>& p) {
  const int rows = p.shape.front();
  return {p.values.data(), rows, static_cast<Eigen::Index>(p.values.size() / static_cast<std::size_t>(rows))};
}

template <typename T>
Eigen::Map<const RowMatrix<T>> as_matrix(const ParamTensor<T>& p) {
  const int rows = p.shape.front();
  return {p.values.data(), rows, static_cast<Eigen::Index>(p.values.size() / static_cast<std::size_t>(rows))};
}

template <typename T>
ParamTensor<T> make_param(std::string name, std::vector<int> shape) {
  const auto n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                 [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  return {std::move(name), std::move(shape), AlignedVector<T>(n, T(0))};
}

// Parameter order, fixed by the topology:
//   per block b, conv c: weight [out, in, k, k], bias [out]
//   score.weight [classes, C_last], score.bias [classes]
//   per fusion f: up.weight [classes, classes, kf, kf],
//                 tap.weight [classes, C_tap], tap.bias [classes]
//   final.weight [classes, classes, k_final, k_final]
struct Layout {
  int conv_count = 0;
  int score = 0;
  int fusion = 0;  // first fusion param index
  int final = 0;

  explicit Layout(const FcnTopology& t) {
    conv_count = t.blocks() * t.convs_per_block;
    score = 2 * conv_count;
    fusion = score + 2;
    final = fusion + 3 * t.fusion_stages;
  }
  int conv_weight(int layer) const { return 2 * layer; }
  int conv_bias(int layer) const { return 2 * layer + 1; }
  int up(int f) const { return fusion + 3 * f; }
  int tap_weight(int f) const { return fusion + 3 * f + 1; }
  int tap_bias(int f) const { return fusion + 3 * f + 2; }
};

template <typename T>
void bilinear_init(ParamTensor<T>& p, int classes, int kernel, int stride) {
  const double center = 0.5 * (kernel - 1);
  auto m = as_matrix(p);
  for (int c = 0; c < classes; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const double wy = std::max(0.0, 1.0 - std::abs(ky - center) / stride);
        const double wx = std::max(0.0, 1.0 - std::abs(kx - center) / stride);
        m(c, (c * kernel + ky) * kernel + kx) = static_cast<T>(wy * wx);
      }
    }
  }
}

}  // namespace

template <typename T>
FcnNetwork<T>::FcnNetwork(const FcnTopology& topology, std::uint64_t seed) : topology_(topology) {
  topology_.validate();
  const auto& t = topology_;
  Rng rng(seed);
  // Conv layers use the ReLU gain; the linear score heads start 10x smaller
  // so the initial class distribution is close to uniform.
  auto uniform_fill = [&](ParamTensor<T>& p, int fan_in, double gain) {
    const double a = std::sqrt(gain / fan_in);
    for (auto& v : p.values) v = static_cast<T>(rng.uniform(-a, a));
  };

  int in_ch = 1;
  for (int b = 0; b < t.blocks(); ++b) {
    for (int c = 0; c < t.convs_per_block; ++c) {
      const int out_ch = t.block_channels[static_cast<std::size_t>(b)];
      const std::string base = "block" + std::to_string(b) + ".conv" + std::to_string(c);
      auto w = make_param<T>(base + ".weight", {out_ch, in_ch, t.kernel, t.kernel});
      uniform_fill(w, in_ch * t.kernel * t.kernel, 6.0);
      params_.push_back(std::move(w));
      params_.push_back(make_param<T>(base + ".bias", {out_ch}));
      in_ch = out_ch;
    }
  }
  auto score = make_param<T>("score.weight", {t.classes, in_ch});
  uniform_fill(score, in_ch, 0.03);
  params_.push_back(std::move(score));
  params_.push_back(make_param<T>("score.bias", {t.classes}));

  for (int f = 0; f < t.fusion_stages; ++f) {
    const std::string base = "fuse" + std::to_string(f);
    auto up = make_param<T>(base + ".up.weight", {t.classes, t.classes, t.fusion_kernel, t.fusion_kernel});
    bilinear_init(up, t.classes, t.fusion_kernel, 2);
    params_.push_back(std::move(up));
    const int tap_ch = t.block_channels[static_cast<std::size_t>(t.blocks() - 2 - f)];
    auto tap = make_param<T>(base + ".tap.weight", {t.classes, tap_ch});
    uniform_fill(tap, tap_ch, 0.03);
    params_.push_back(std::move(tap));
    params_.push_back(make_param<T>(base + ".tap.bias", {t.classes}));
  }
  auto fin = make_param<T>("final.weight", {t.classes, t.classes, t.final_kernel, t.final_kernel});
  bilinear_init(fin, t.classes, t.final_kernel, t.final_factor());
  params_.push_back(std::move(fin));
}

template <typename T>
std::size_t FcnNetwork<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <typename T>
std::vector<ParamTensor<T>> FcnNetwork<T>::zero_like() const {
  std::vector<ParamTensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back({p.name, p.shape, AlignedVector<T>(p.values.size(), T(0))});
  return out;
}

template <typename T>
void FcnNetwork<T>::forward(const Tensor<T>& input, FcnWorkspace<T>& ws) const {
  const auto& t = topology_;
  if (input.channels != 1 || input.height != t.input_size || input.width != t.input_size) {
    throw Error(ErrorCode::ShapeMismatch, "input must be 1 x " + std::to_string(t.input_size) + " x " +
                                              std::to_string(t.input_size));
  }
  const Layout L(t);
  const int B = t.blocks();
  ws.input = &input;
  ws.conv_cols.resize(static_cast<std::size_t>(L.conv_count));
  ws.conv_out.resize(static_cast<std::size_t>(L.conv_count));
  ws.pooled.resize(static_cast<std::size_t>(B));
  ws.pool_argmax.resize(static_cast<std::size_t>(B));
  ws.tap_cols.resize(static_cast<std::size_t>(t.fusion_stages));
  ws.scores.resize(static_cast<std::size_t>(t.fusion_stages + 1));

  const Tensor<T>* cur = &input;
  int layer = 0;
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < t.convs_per_block; ++c, ++layer) {
      const auto& w = params_[static_cast<std::size_t>(L.conv_weight(layer))];
      const auto& bias = params_[static_cast<std::size_t>(L.conv_bias(layer))];
      auto& out = ws.conv_out[static_cast<std::size_t>(layer)];
      layers::conv_forward<T>(*cur, as_matrix(w), bias.values, t.kernel, ws.conv_cols[static_cast<std::size_t>(layer)],
                              out);
      layers::relu_forward(out);
      cur = &out;
    }
    layers::maxpool_forward(*cur, ws.pooled[static_cast<std::size_t>(b)], ws.pool_argmax[static_cast<std::size_t>(b)]);
    cur = &ws.pooled[static_cast<std::size_t>(b)];
  }

  layers::conv_forward<T>(*cur, as_matrix(params_[static_cast<std::size_t>(L.score)]),
                          params_[static_cast<std::size_t>(L.score + 1)].values, 1, ws.head_cols, ws.scores[0]);
  for (int f = 0; f < t.fusion_stages; ++f) {
    Tensor<T> up;
    layers::upsample_forward<T>(ws.scores[static_cast<std::size_t>(f)],
                                as_matrix(params_[static_cast<std::size_t>(L.up(f))]), t.classes, t.fusion_kernel, 2,
                                up);
    const auto& tap_in = ws.pooled[static_cast<std::size_t>(B - 2 - f)];
    auto& next = ws.scores[static_cast<std::size_t>(f + 1)];
    layers::conv_forward<T>(tap_in, as_matrix(params_[static_cast<std::size_t>(L.tap_weight(f))]),
                            params_[static_cast<std::size_t>(L.tap_bias(f))].values, 1,
                            ws.tap_cols[static_cast<std::size_t>(f)], next);
    next.matrix() += up.matrix();
  }
  layers::upsample_forward<T>(ws.scores.back(), as_matrix(params_[static_cast<std::size_t>(L.final)]), t.classes,
                              t.final_kernel, t.final_factor(), ws.logits);
}

template <typename T>
double FcnNetwork<T>::backward(std::span<const std::uint8_t> labels, T loss_scale, FcnWorkspace<T>& ws,
                               std::vector<ParamTensor<T>>& grads) const {
  const auto& t = topology_;
  const Layout L(t);
  const int B = t.blocks();
  auto P = [&](int i) -> const ParamTensor<T>& { return params_[static_cast<std::size_t>(i)]; };
  auto G = [&](int i) -> ParamTensor<T>& { return grads[static_cast<std::size_t>(i)]; };

  Tensor<T> g_logits;
  const double loss = layers::softmax_xent(ws.logits, labels, loss_scale, g_logits);

  Tensor<T> g_score;
  layers::upsample_backward<T>(ws.scores.back(), as_matrix(P(L.final)), t.final_kernel, t.final_factor(), g_logits,
                               as_matrix(G(L.final)), &g_score);

  std::vector<Tensor<T>> g_pooled(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    const auto& p = ws.pooled[static_cast<std::size_t>(b)];
    g_pooled[static_cast<std::size_t>(b)] = Tensor<T>(p.channels, p.height, p.width);
  }

  for (int f = t.fusion_stages - 1; f >= 0; --f) {
    const int tb = B - 2 - f;
    Tensor<T> g_tap;
    layers::conv_backward<T>(ws.tap_cols[static_cast<std::size_t>(f)], ws.pooled[static_cast<std::size_t>(tb)],
                             as_matrix(P(L.tap_weight(f))), 1, g_score, as_matrix(G(L.tap_weight(f))),
                             G(L.tap_bias(f)).values, &g_tap);
    g_pooled[static_cast<std::size_t>(tb)].matrix() += g_tap.matrix();
    Tensor<T> g_prev;
    layers::upsample_backward<T>(ws.scores[static_cast<std::size_t>(f)], as_matrix(P(L.up(f))), t.fusion_kernel, 2,
                                 g_score, as_matrix(G(L.up(f))), &g_prev);
    g_score = std::move(g_prev);
  }

  {
    Tensor<T> g_head;
    layers::conv_backward<T>(ws.head_cols, ws.pooled[static_cast<std::size_t>(B - 1)], as_matrix(P(L.score)), 1,
                             g_score, as_matrix(G(L.score)), G(L.score + 1).values, &g_head);
    g_pooled[static_cast<std::size_t>(B - 1)].matrix() += g_head.matrix();
  }

  int layer = L.conv_count - 1;
  for (int b = B - 1; b >= 0; --b) {
    const int last = layer;
    Tensor<T> g(ws.conv_out[static_cast<std::size_t>(last)].channels, ws.conv_out[static_cast<std::size_t>(last)].height,
                ws.conv_out[static_cast<std::size_t>(last)].width);
    layers::maxpool_backward(g_pooled[static_cast<std::size_t>(b)], ws.pool_argmax[static_cast<std::size_t>(b)], g);
    for (int c = t.convs_per_block - 1; c >= 0; --c, --layer) {
      layers::relu_backward(ws.conv_out[static_cast<std::size_t>(layer)], g);
      const Tensor<T>* in = layer == 0 ? ws.input
                            : c == 0   ? &ws.pooled[static_cast<std::size_t>(b - 1)]
                                       : &ws.conv_out[static_cast<std::size_t>(layer - 1)];
      Tensor<T> g_in;
      layers::conv_backward<T>(ws.conv_cols[static_cast<std::size_t>(layer)], *in, as_matrix(P(L.conv_weight(layer))),
                               t.kernel, g, as_matrix(G(L.conv_weight(layer))), G(L.conv_bias(layer)).values,
                               layer == 0 ? nullptr : &g_in);
      if (layer == 0) break;
      if (c == 0) {
        g_pooled[static_cast<std::size_t>(b - 1)].matrix() += g_in.matrix();
      } else {
        g = std::move(g_in);
      }
    }
  }
  return loss;
}

template class FcnNetwork<float>;
template class FcnNetwork<double>;

}  // namespace mvdp
