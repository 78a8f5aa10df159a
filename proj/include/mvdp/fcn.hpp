#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/StdVector>

namespace mvdp {

/// Fully-convolutional topology: B conv blocks (each `convs_per_block`
/// k x k convolutions + ReLU, then 2x max pooling), a 1x1 class-score head at
/// stride 2^B, `fusion_stages` learned 2x upsamplings each summed with a 1x1
/// projection of the matching lower block, and a final learned upsampling
/// back to the input resolution with an odd `final_kernel`.
struct FcnTopology {
  int input_size = 128;
  int classes = 44;
  std::vector<int> block_channels = {16, 32, 64, 96};
  int convs_per_block = 2;
  int kernel = 3;
  int fusion_stages = 2;
  int fusion_kernel = 4;
  int final_kernel = 5;

  int blocks() const { return static_cast<int>(block_channels.size()); }
  int coarse_stride() const { return 1 << blocks(); }
  int final_factor() const { return coarse_stride() >> fusion_stages; }
  /// Throws InvalidArgument when the spatial algebra does not map S x S back
  /// to S x S.
  void validate() const;
  bool operator==(const FcnTopology&) const = default;
};

/// Storage for anything viewed through Eigen maps. A fixed base alignment
/// keeps vectorized reductions in the same order on every run.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Channel-major activation volume.
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  AlignedVector<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, T(0)) {}
  int plane() const { return height * width; }
  Eigen::Map<RowMatrix<T>> matrix() { return {data.data(), channels, plane()}; }
  Eigen::Map<const RowMatrix<T>> matrix() const { return {data.data(), channels, plane()}; }
  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  T at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  AlignedVector<T> values;

  std::size_t size() const { return values.size(); }
};

/// Forward caches for one image; reused across calls to avoid reallocation.
template <typename T>
struct FcnWorkspace {
  const Tensor<T>* input = nullptr;
  std::vector<Tensor<T>> conv_cols;  // im2col per conv layer
  std::vector<Tensor<T>> conv_out;   // post-ReLU activation per conv layer
  std::vector<Tensor<T>> pooled;     // per block
  std::vector<std::vector<std::int32_t>> pool_argmax;
  Tensor<T> head_cols;
  std::vector<Tensor<T>> tap_cols;   // per fusion stage
  std::vector<Tensor<T>> scores;     // coarse score, then after each fusion
  Tensor<T> logits;
};

template <typename T>
class FcnNetwork {
 public:
  FcnNetwork() = default;
  /// Weights drawn centered-uniform scaled by fan-in; upsampling kernels
  /// start as bilinear interpolation.
  FcnNetwork(const FcnTopology& topology, std::uint64_t seed);

  const FcnTopology& topology() const { return topology_; }
  std::vector<ParamTensor<T>>& params() { return params_; }
  const std::vector<ParamTensor<T>>& params() const { return params_; }
  std::size_t parameter_count() const;

  /// Logits at input resolution (classes x S x S). Throws ShapeMismatch.
  void forward(const Tensor<T>& input, FcnWorkspace<T>& ws) const;

  /// Adds d(loss_scale * sum of per-pixel cross-entropy)/d(params) into
  /// `grads` and returns the unscaled summed cross-entropy. Requires a prior
  /// forward() on the same workspace.
  double backward(std::span<const std::uint8_t> labels, T loss_scale, FcnWorkspace<T>& ws,
                  std::vector<ParamTensor<T>>& grads) const;

  /// Zero-valued tensors shaped like params().
  std::vector<ParamTensor<T>> zero_like() const;

  template <typename U>
  FcnNetwork<U> cast() const {
    FcnNetwork<U> out;
    out.topology_ = topology_;
    for (const auto& p : params_) {
      ParamTensor<U> q{p.name, p.shape, AlignedVector<U>(p.values.begin(), p.values.end())};
      out.params_.push_back(std::move(q));
    }
    return out;
  }

 private:
  template <typename U>
  friend class FcnNetwork;

  FcnTopology topology_;
  std::vector<ParamTensor<T>> params_;
};

using FcnModel = FcnNetwork<float>;

// Individual layers, exposed for isolated gradient checks.
namespace layers {

template <typename T>
using ConstMatRef = Eigen::Ref<const RowMatrix<T>>;
template <typename T>
using MatRef = Eigen::Ref<RowMatrix<T>>;

/// Same-padded stride-1 convolution. weight: out x (in*k*k).
template <typename T>
void conv_forward(const Tensor<T>& in, ConstMatRef<T> weight, std::span<const T> bias, int kernel, Tensor<T>& cols,
                  Tensor<T>& out);
/// Accumulates into grad_weight / grad_bias; overwrites *grad_in when given.
template <typename T>
void conv_backward(const Tensor<T>& cols, const Tensor<T>& in, ConstMatRef<T> weight, int kernel,
                   const Tensor<T>& grad_out, MatRef<T> grad_weight, std::span<T> grad_bias, Tensor<T>* grad_in);

template <typename T>
void relu_forward(Tensor<T>& x);
/// Zeroes gradient entries where the forward output was not positive.
template <typename T>
void relu_backward(const Tensor<T>& out, Tensor<T>& grad);

/// 2x2 max pooling, stride 2.
template <typename T>
void maxpool_forward(const Tensor<T>& in, Tensor<T>& out, std::vector<std::int32_t>& argmax);
template <typename T>
void maxpool_backward(const Tensor<T>& grad_out, const std::vector<std::int32_t>& argmax, Tensor<T>& grad_in);

/// Learned upsampling (transposed convolution) by `stride` with a k x k
/// kernel, cropped by floor((k - stride) / 2) to in*stride pixels.
/// weight: in x (out*k*k).
template <typename T>
void upsample_forward(const Tensor<T>& in, ConstMatRef<T> weight, int out_channels, int kernel, int stride,
                      Tensor<T>& out);
template <typename T>
void upsample_backward(const Tensor<T>& in, ConstMatRef<T> weight, int kernel, int stride, const Tensor<T>& grad_out,
                       MatRef<T> grad_weight, Tensor<T>* grad_in);

/// Per-pixel softmax cross-entropy summed over pixels; writes
/// loss_scale * d(sum)/d(logits) into grad.
template <typename T>
double softmax_xent(const Tensor<T>& logits, std::span<const std::uint8_t> labels, T loss_scale, Tensor<T>& grad);

/// Softmax over channels, per pixel, in place.
template <typename T>
void softmax(Tensor<T>& logits);

}  // namespace layers

}  // namespace mvdp
