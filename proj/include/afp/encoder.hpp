#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "afp/frontend.hpp"

namespace afp {

/// Channel-major feature-map shape (C x F x T).
struct MapShape {
  int channels = 0;
  int freq = 0;
  int time = 0;

  std::size_t size() const { return static_cast<std::size_t>(channels) * freq * time; }
  bool operator==(const MapShape&) const = default;
};

/// Architecture of the residual encoder. Defaults reproduce the full-width
/// network: 1x64x96 -> 32x64x96 -> ... -> 1024x2x3 -> 6144 -> 128.
struct EncoderArch {
  int n_mels = 64;
  int n_frames = 96;
  int base_channels = 32;
  int down_blocks = 5;     // stride-2 residual blocks after ResBlock1
  int embedding_dim = 128; // d, number of head branches
  int head_hidden = 32;    // o, per-branch hidden width
  int attention_after = 1; // 0: after the front conv, k: after ResBlock k, -1: off
  double attention_scale = 100.0;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;

  /// Full-width architecture with channel counts scaled by `width`
  /// (e.g. 0.125 for the desk-scale toy). Throws ConfigError if 32*width is
  /// not a positive integer.
  static EncoderArch with_width(double width);

  /// Output shape of the front conv (index 0) and each residual block (1..).
  std::vector<MapShape> shape_chain() const;
  MapShape attention_shape() const;
  int flatten_size() const;
  int branch_input() const;  // i = flatten / d
  void validate() const;

  bool operator==(const EncoderArch&) const = default;
};

template <class T>
struct Conv {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  std::vector<T> weight;  // out x in x k x k
  std::vector<T> bias;    // empty when followed by batch norm
};

template <class T>
struct BatchNorm {
  int channels = 0;
  std::vector<T> gamma, beta;
  std::vector<T> running_mean, running_var;
};

template <class T>
struct ResBlock {
  int stride = 1;
  Conv<T> conv1;
  BatchNorm<T> bn1;
  Conv<T> conv2;
  BatchNorm<T> bn2;
  bool has_shortcut = false;  // 1x1 strided conv; identity otherwise
  Conv<T> shortcut;
};

/// Learnable per-channel projections for the spectral-temporal mask.
/// w_temp reduces over frequency (C x F); w_spect reduces over time (C x T).
template <class T>
struct Attention {
  MapShape shape;
  std::vector<T> w_spect;
  std::vector<T> w_temp;
  T scale = T(100);
};

/// Split projection head: d independent branches i -> o (ELU) -> 1.
template <class T>
struct SplitHead {
  int branches = 0;
  int input = 0;
  int hidden = 0;
  std::vector<T> w1;  // d x o x i
  std::vector<T> b1;  // d x o
  std::vector<T> w2;  // d x o
  std::vector<T> b2;  // d
};

template <class T>
struct EncoderParams {
  EncoderArch arch;
  Conv<T> front;
  BatchNorm<T> front_bn;
  std::vector<ResBlock<T>> blocks;  // blocks[0] is ResBlock1 (stride 1)
  Attention<T> attention;
  SplitHead<T> head;
};

enum class TensorRole { kTrainable, kRunningStat };

/// Visits every tensor in a fixed order with a stable name.
/// fn(const std::string& name, std::vector<T>& data, TensorRole role)
template <class P, class Fn>
void for_each_tensor(P& params, Fn&& fn) {
  const auto conv = [&](const std::string& prefix, auto& c) {
    fn(prefix + ".weight", c.weight, TensorRole::kTrainable);
    if (!c.bias.empty()) fn(prefix + ".bias", c.bias, TensorRole::kTrainable);
  };
  const auto bn = [&](const std::string& prefix, auto& b) {
    fn(prefix + ".gamma", b.gamma, TensorRole::kTrainable);
    fn(prefix + ".beta", b.beta, TensorRole::kTrainable);
    fn(prefix + ".running_mean", b.running_mean, TensorRole::kRunningStat);
    fn(prefix + ".running_var", b.running_var, TensorRole::kRunningStat);
  };
  conv("front.conv", params.front);
  bn("front.bn", params.front_bn);
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    auto& blk = params.blocks[b];
    const std::string p = "block" + std::to_string(b + 1);
    conv(p + ".conv1", blk.conv1);
    bn(p + ".bn1", blk.bn1);
    conv(p + ".conv2", blk.conv2);
    bn(p + ".bn2", blk.bn2);
    if (blk.has_shortcut) conv(p + ".shortcut", blk.shortcut);
  }
  if (params.arch.attention_after >= 0) {
    fn(std::string("attention.w_spect"), params.attention.w_spect, TensorRole::kTrainable);
    fn(std::string("attention.w_temp"), params.attention.w_temp, TensorRole::kTrainable);
  }
  fn(std::string("head.w1"), params.head.w1, TensorRole::kTrainable);
  fn(std::string("head.b1"), params.head.b1, TensorRole::kTrainable);
  fn(std::string("head.w2"), params.head.w2, TensorRole::kTrainable);
  fn(std::string("head.b2"), params.head.b2, TensorRole::kTrainable);
}

/// Fan-in scaled uniform initialization; attention weights start at zero.
template <class T>
EncoderParams<T> init_encoder(const EncoderArch& arch, std::uint64_t seed);

/// Same structure with every tensor zeroed (gradient accumulator).
template <class T>
EncoderParams<T> zeros_like(const EncoderParams<T>& params);

template <class To, class From>
EncoderParams<To> cast_params(const EncoderParams<From>& params) {
  EncoderParams<To> out = zeros_like(init_encoder<To>(params.arch, 0));
  std::vector<std::vector<To>*> dst;
  for_each_tensor(out, [&](const std::string&, std::vector<To>& d, TensorRole) { dst.push_back(&d); });
  std::size_t i = 0;
  for_each_tensor(params, [&](const std::string&, const std::vector<From>& s, TensorRole) {
    dst[i++]->assign(s.begin(), s.end());
  });
  out.attention.scale = static_cast<To>(params.attention.scale);
  return out;
}

/// Batch of feature maps, [n][c][h][w].
template <class T>
struct Activations {
  int n = 0;
  MapShape shape;
  std::vector<T> data;

  Activations() = default;
  Activations(int batch, MapShape s) : n(batch), shape(s), data(static_cast<std::size_t>(batch) * s.size()) {}
  std::span<T> sample(int i) { return std::span<T>(data).subspan(static_cast<std::size_t>(i) * shape.size(), shape.size()); }
  std::span<const T> sample(int i) const {
    return std::span<const T>(data).subspan(static_cast<std::size_t>(i) * shape.size(), shape.size());
  }
};

enum class BnMode { kTraining, kInference };

// ---------------------------------------------------------------------------
// Spectral-temporal attention (single feature map)

/// A[c,f,t] = S * softmax_f(sum_t X*w_spect)[f] * softmax_t(sum_f X*w_temp)[t].
template <class T>
std::vector<T> attention_mask(std::span<const T> x, const Attention<T>& p);

/// Elementwise product A * X.
template <class T>
std::vector<T> apply_attention(std::span<const T> x, std::span<const T> mask);

/// Gradient of X' = mask(X) * X. Accumulates into dw_spect/dw_temp; overwrites dx.
/// With detach_mask the mask is treated as a constant.
template <class T>
void attention_backward(std::span<const T> x, const Attention<T>& p, std::span<const T> dout,
                        std::span<T> dx, std::span<T> dw_spect, std::span<T> dw_temp,
                        bool detach_mask = false);

// ---------------------------------------------------------------------------
// Residual block and full encoder

template <class T>
Activations<T> resblock_forward(const Activations<T>& x, const ResBlock<T>& block, BnMode mode,
                                double eps);

/// Recorded forward pass over a batch, consumed by encoder_backward.
template <class T>
struct ForwardPass;

template <class T>
class EncoderTape {
 public:
  EncoderTape();
  ~EncoderTape();
  EncoderTape(EncoderTape&&) noexcept;
  EncoderTape& operator=(EncoderTape&&) noexcept;

  /// Row-major n x d unit-norm embeddings.
  const std::vector<T>& embeddings() const;
  int batch() const;
  /// Batch statistics of every BN layer in visit order (mean, biased var).
  std::vector<std::pair<std::vector<T>, std::vector<T>>> batch_stats() const;

 private:
  template <class U>
  friend EncoderTape<U> encoder_forward(std::span<const U>, int, const EncoderParams<U>&, BnMode,
                                        bool);
  template <class U>
  friend void encoder_backward(const EncoderTape<U>&, const EncoderParams<U>&, std::span<const U>,
                               EncoderParams<U>&);
  std::unique_ptr<ForwardPass<T>> pass_;
};

/// Forward pass over `batch` spectrograms laid out contiguously (F*T each).
/// Throws NumericError on non-finite activations.
template <class T>
EncoderTape<T> encoder_forward(std::span<const T> inputs, int batch, const EncoderParams<T>& params,
                               BnMode mode, bool detach_attention = false);

/// Backpropagates an n x d upstream gradient; accumulates into grads.
template <class T>
void encoder_backward(const EncoderTape<T>& tape, const EncoderParams<T>& params,
                      std::span<const T> upstream, EncoderParams<T>& grads);

/// Inference-mode embedding of one spectrogram.
template <class T>
std::vector<T> encode(std::span<const T> spec, const EncoderParams<T>& params);

std::vector<float> encode(const LogMelSpec& spec, const EncoderParams<float>& params);

/// Parameter gradients for a single spectrogram and upstream gradient.
template <class T>
EncoderParams<T> encode_backward(std::span<const T> spec, const EncoderParams<T>& params,
                                 std::span<const T> upstream, BnMode mode = BnMode::kInference);

/// Folds recorded batch statistics into the running statistics.
template <class T>
void update_running_stats(EncoderParams<T>& params, const EncoderTape<T>& tape);

/// Embeds many spectrograms in inference mode (OpenMP over samples).
std::vector<std::vector<float>> encode_batch(const std::vector<LogMelSpec>& specs,
                                             const EncoderParams<float>& params);

}  // namespace afp
