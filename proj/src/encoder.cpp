#include "afp/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "afp/error.hpp"
#include "afp/kernels.hpp"
#include "afp/parallel.hpp"

namespace afp {

// ---------------------------------------------------------------------------
// Architecture

EncoderArch EncoderArch::with_width(double width) {
  EncoderArch arch;
  const double channels = 32.0 * width;
  const auto rounded = std::lround(channels);
  if (!(width > 0.0) || rounded < 1 || std::abs(channels - static_cast<double>(rounded)) > 1e-9)
    throw ConfigError("encoder width must scale 32 base channels to a positive integer");
  arch.base_channels = static_cast<int>(rounded);
  return arch;
}

std::vector<MapShape> EncoderArch::shape_chain() const {
  std::vector<MapShape> chain;
  chain.push_back({base_channels, n_mels, n_frames});  // front conv
  chain.push_back({base_channels, n_mels, n_frames});  // ResBlock1
  for (int j = 1; j <= down_blocks; ++j)
    chain.push_back({base_channels << j, n_mels >> j, n_frames >> j});
  return chain;
}

MapShape EncoderArch::attention_shape() const {
  if (attention_after < 0) return {};
  return shape_chain().at(static_cast<std::size_t>(attention_after));
}

int EncoderArch::flatten_size() const {
  const MapShape last = shape_chain().back();
  return static_cast<int>(last.size());
}

int EncoderArch::branch_input() const { return flatten_size() / embedding_dim; }

void EncoderArch::validate() const {
  if (n_mels <= 0 || n_frames <= 0 || base_channels <= 0 || down_blocks < 0)
    throw ConfigError("encoder dimensions must be positive");
  if (n_mels % (1 << down_blocks) != 0 || n_frames % (1 << down_blocks) != 0)
    throw ConfigError("encoder input must be divisible by 2^down_blocks on both axes");
  if (embedding_dim <= 0 || head_hidden <= 0) throw ConfigError("encoder head sizes must be positive");
  if (flatten_size() % embedding_dim != 0)
    throw ConfigError("encoder flatten size must be a multiple of the embedding dimension");
  if (attention_after < -1 || attention_after > down_blocks + 1)
    throw ConfigError("encoder.attention_after out of range");
  if (!(bn_eps > 0.0) || !(bn_momentum >= 0.0 && bn_momentum < 1.0))
    throw ConfigError("encoder batch-norm eps/momentum invalid");
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

template <class T>
void uniform_fill(std::vector<T>& v, std::size_t n, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  v.resize(n);
  for (T& x : v) x = static_cast<T>(dist(rng));
}

template <class T>
Conv<T> make_conv(int in, int out, int kernel, int stride, bool bias, std::mt19937_64& rng) {
  Conv<T> c{in, out, kernel, stride, {}, {}};
  const double fan_in = static_cast<double>(in) * kernel * kernel;
  uniform_fill(c.weight, static_cast<std::size_t>(out) * in * kernel * kernel,
               std::sqrt(6.0 / fan_in), rng);
  if (bias) uniform_fill(c.bias, static_cast<std::size_t>(out), 1.0 / std::sqrt(fan_in), rng);
  return c;
}

template <class T>
BatchNorm<T> make_bn(int channels) {
  const auto n = static_cast<std::size_t>(channels);
  return {channels, std::vector<T>(n, T(1)), std::vector<T>(n, T(0)), std::vector<T>(n, T(0)),
          std::vector<T>(n, T(1))};
}

template <class T>
kernels::ConvShape conv_shape(const Conv<T>& c, const MapShape& in) {
  return {c.in_channels, c.out_channels, in.freq, in.time, c.kernel, c.stride};
}

}  // namespace

template <class T>
EncoderParams<T> init_encoder(const EncoderArch& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  EncoderParams<T> p;
  p.arch = arch;
  const int base = arch.base_channels;
  p.front = make_conv<T>(1, base, 3, 1, false, rng);
  p.front_bn = make_bn<T>(base);
  for (int j = 0; j <= arch.down_blocks; ++j) {
    const int in = j == 0 ? base : base << (j - 1);
    const int out = base << j;
    const int stride = j == 0 ? 1 : 2;
    ResBlock<T> b;
    b.stride = stride;
    b.conv1 = make_conv<T>(in, out, 3, stride, false, rng);
    b.bn1 = make_bn<T>(out);
    b.conv2 = make_conv<T>(out, out, 3, 1, false, rng);
    b.bn2 = make_bn<T>(out);
    b.has_shortcut = in != out || stride != 1;
    if (b.has_shortcut) b.shortcut = make_conv<T>(in, out, 1, stride, true, rng);
    p.blocks.push_back(std::move(b));
  }
  p.attention.scale = static_cast<T>(arch.attention_scale);
  if (arch.attention_after >= 0) {
    p.attention.shape = arch.attention_shape();
    const MapShape& s = p.attention.shape;
    p.attention.w_spect.assign(static_cast<std::size_t>(s.channels) * s.time, T(0));
    p.attention.w_temp.assign(static_cast<std::size_t>(s.channels) * s.freq, T(0));
  }
  SplitHead<T>& h = p.head;
  h.branches = arch.embedding_dim;
  h.input = arch.branch_input();
  h.hidden = arch.head_hidden;
  const auto d = static_cast<std::size_t>(h.branches);
  const auto o = static_cast<std::size_t>(h.hidden);
  const double b1 = 1.0 / std::sqrt(static_cast<double>(h.input));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(h.hidden));
  uniform_fill(h.w1, d * o * static_cast<std::size_t>(h.input), b1, rng);
  uniform_fill(h.b1, d * o, b1, rng);
  uniform_fill(h.w2, d * o, b2, rng);
  uniform_fill(h.b2, d, b2, rng);
  return p;
}

template <class T>
EncoderParams<T> zeros_like(const EncoderParams<T>& params) {
  EncoderParams<T> z = params;
  for_each_tensor(z, [](const std::string&, std::vector<T>& v, TensorRole) {
    std::fill(v.begin(), v.end(), T(0));
  });
  return z;
}

// ---------------------------------------------------------------------------
// Attention

namespace {

template <class T>
void softmax(std::span<T> v) {
  const T m = *std::max_element(v.begin(), v.end());
  T sum = 0;
  for (T& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (T& x : v) x /= sum;
}

// Spectral (over f) and temporal (over t) weights for one channel plane.
template <class T>
void channel_weights(const T* x, const T* w_spect, const T* w_temp, int F, int Tn, T* a_spect,
                     T* a_temp) {
  for (int f = 0; f < F; ++f) {
    T acc = 0;
    for (int t = 0; t < Tn; ++t) acc += x[f * Tn + t] * w_spect[t];
    a_spect[f] = acc;
  }
  for (int t = 0; t < Tn; ++t) a_temp[t] = 0;
  for (int f = 0; f < F; ++f)
    for (int t = 0; t < Tn; ++t) a_temp[t] += x[f * Tn + t] * w_temp[f];
  softmax(std::span<T>(a_spect, static_cast<std::size_t>(F)));
  softmax(std::span<T>(a_temp, static_cast<std::size_t>(Tn)));
}

// Forward for one channel: out = S * a_spect[f] * a_temp[t] * x.
template <class T>
void channel_forward(const T* x, const T* w_spect, const T* w_temp, T scale, int F, int Tn,
                     T* a_spect, T* a_temp, T* out) {
  channel_weights(x, w_spect, w_temp, F, Tn, a_spect, a_temp);
  for (int f = 0; f < F; ++f)
    for (int t = 0; t < Tn; ++t) out[f * Tn + t] = scale * a_spect[f] * a_temp[t] * x[f * Tn + t];
}

template <class T>
void channel_backward(const T* x, const T* w_spect, const T* w_temp, T scale, int F, int Tn,
                      const T* a_spect, const T* a_temp, const T* dout, T* dx, T* dw_spect,
                      T* dw_temp, bool detach, std::vector<T>& scratch) {
  for (int f = 0; f < F; ++f)
    for (int t = 0; t < Tn; ++t)
      dx[f * Tn + t] = dout[f * Tn + t] * scale * a_spect[f] * a_temp[t];
  if (detach) return;
  scratch.assign(static_cast<std::size_t>(F + Tn), T(0));
  T* da_spect = scratch.data();
  T* da_temp = scratch.data() + F;
  for (int f = 0; f < F; ++f)
    for (int t = 0; t < Tn; ++t) {
      const T dmask = dout[f * Tn + t] * x[f * Tn + t] * scale;
      da_spect[f] += dmask * a_temp[t];
      da_temp[t] += dmask * a_spect[f];
    }
  // Softmax Jacobian: du = a * (da - <a, da>).
  T dot_s = 0, dot_t = 0;
  for (int f = 0; f < F; ++f) dot_s += a_spect[f] * da_spect[f];
  for (int t = 0; t < Tn; ++t) dot_t += a_temp[t] * da_temp[t];
  for (int f = 0; f < F; ++f) da_spect[f] = a_spect[f] * (da_spect[f] - dot_s);
  for (int t = 0; t < Tn; ++t) da_temp[t] = a_temp[t] * (da_temp[t] - dot_t);
  // u_spect[f] = sum_t x[f,t] w_spect[t];  u_temp[t] = sum_f x[f,t] w_temp[f]
  for (int f = 0; f < F; ++f)
    for (int t = 0; t < Tn; ++t) {
      const T xv = x[f * Tn + t];
      dw_spect[t] += da_spect[f] * xv;
      dw_temp[f] += da_temp[t] * xv;
      dx[f * Tn + t] += da_spect[f] * w_spect[t] + da_temp[t] * w_temp[f];
    }
}

template <class T>
void check_attention_shape(std::span<const T> x, const Attention<T>& p) {
  const MapShape& s = p.shape;
  if (x.size() != s.size() || p.w_spect.size() != static_cast<std::size_t>(s.channels) * s.time ||
      p.w_temp.size() != static_cast<std::size_t>(s.channels) * s.freq)
    throw ConfigError("attention: shape mismatch");
}

}  // namespace

template <class T>
std::vector<T> attention_mask(std::span<const T> x, const Attention<T>& p) {
  check_attention_shape(x, p);
  const auto [C, F, Tn] = p.shape;
  std::vector<T> mask(x.size());
  std::vector<T> a_spect(static_cast<std::size_t>(F)), a_temp(static_cast<std::size_t>(Tn));
  for (int c = 0; c < C; ++c) {
    const T* xc = x.data() + static_cast<std::size_t>(c) * F * Tn;
    channel_weights(xc, p.w_spect.data() + static_cast<std::size_t>(c) * Tn,
                    p.w_temp.data() + static_cast<std::size_t>(c) * F, F, Tn, a_spect.data(),
                    a_temp.data());
    T* mc = mask.data() + static_cast<std::size_t>(c) * F * Tn;
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < Tn; ++t) mc[f * Tn + t] = p.scale * a_spect[f] * a_temp[t];
  }
  return mask;
}

template <class T>
std::vector<T> apply_attention(std::span<const T> x, std::span<const T> mask) {
  if (x.size() != mask.size()) throw ConfigError("apply_attention: shape mismatch");
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = mask[i] * x[i];
  return out;
}

template <class T>
void attention_backward(std::span<const T> x, const Attention<T>& p, std::span<const T> dout,
                        std::span<T> dx, std::span<T> dw_spect, std::span<T> dw_temp,
                        bool detach_mask) {
  check_attention_shape(x, p);
  const auto [C, F, Tn] = p.shape;
  std::vector<T> a_spect(static_cast<std::size_t>(F)), a_temp(static_cast<std::size_t>(Tn)), scratch;
  for (int c = 0; c < C; ++c) {
    const std::size_t off = static_cast<std::size_t>(c) * F * Tn;
    const T* ws = p.w_spect.data() + static_cast<std::size_t>(c) * Tn;
    const T* wt = p.w_temp.data() + static_cast<std::size_t>(c) * F;
    channel_weights(x.data() + off, ws, wt, F, Tn, a_spect.data(), a_temp.data());
    channel_backward(x.data() + off, ws, wt, p.scale, F, Tn, a_spect.data(), a_temp.data(),
                     dout.data() + off, dx.data() + off,
                     dw_spect.data() + static_cast<std::size_t>(c) * Tn,
                     dw_temp.data() + static_cast<std::size_t>(c) * F, detach_mask, scratch);
  }
}

// ---------------------------------------------------------------------------
// Layer primitives over batches

namespace {

template <class T>
struct BnRecord {
  std::vector<T> xhat;
  std::vector<T> invstd;
  std::vector<T> mean;
  std::vector<T> var;
};

template <class T>
Activations<T> conv_forward(const Activations<T>& x, const Conv<T>& c) {
  if (x.shape.channels != c.in_channels) throw ConfigError("conv: input channel mismatch");
  const auto s = conv_shape(c, x.shape);
  Activations<T> y(x.n, {c.out_channels, s.out_h(), s.out_w()});
  kernels::conv2d_forward<T>(s, x.n, x.data, c.weight, c.bias, y.data);
  return y;
}

template <class T>
Activations<T> conv_backward(const Activations<T>& x, const Conv<T>& c, const Activations<T>& dy,
                             Conv<T>& grad, bool need_input_grad = true) {
  const auto s = conv_shape(c, x.shape);
  kernels::conv2d_backward_weight<T>(s, x.n, x.data, dy.data, grad.weight, grad.bias);
  Activations<T> dx(x.n, x.shape);
  if (need_input_grad) kernels::conv2d_backward_input<T>(s, x.n, dy.data, c.weight, dx.data);
  return dx;
}

template <class T>
Activations<T> bn_forward(const Activations<T>& x, const BatchNorm<T>& bn, BnMode mode,
                          double eps, BnRecord<T>& rec) {
  const int C = x.shape.channels;
  const std::size_t plane = static_cast<std::size_t>(x.shape.freq) * x.shape.time;
  const double count = static_cast<double>(plane) * x.n;
  Activations<T> y(x.n, x.shape);
  rec.xhat.resize(x.data.size());
  rec.invstd.resize(static_cast<std::size_t>(C));
  rec.mean.resize(static_cast<std::size_t>(C));
  rec.var.resize(static_cast<std::size_t>(C));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == BnMode::kTraining) {
      for (int n = 0; n < x.n; ++n) {
        const T* p = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) mean += p[j];
      }
      mean /= count;
      for (int n = 0; n < x.n; ++n) {
        const T* p = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) var += (p[j] - mean) * (p[j] - mean);
      }
      var /= count;
    } else {
      mean = bn.running_mean[c];
      var = bn.running_var[c];
    }
    const T invstd = static_cast<T>(1.0 / std::sqrt(var + eps));
    rec.mean[c] = static_cast<T>(mean);
    rec.var[c] = static_cast<T>(var);
    rec.invstd[c] = invstd;
    const T m = static_cast<T>(mean);
    for (int n = 0; n < x.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const T xh = (x.data[off + j] - m) * invstd;
        rec.xhat[off + j] = xh;
        y.data[off + j] = bn.gamma[c] * xh + bn.beta[c];
      }
    }
  }
  return y;
}

template <class T>
Activations<T> bn_backward(const Activations<T>& dy, const BatchNorm<T>& bn, BnMode mode,
                           const BnRecord<T>& rec, BatchNorm<T>& grad) {
  const int C = dy.shape.channels;
  const std::size_t plane = static_cast<std::size_t>(dy.shape.freq) * dy.shape.time;
  const T count = static_cast<T>(plane * static_cast<std::size_t>(dy.n));
  Activations<T> dx(dy.n, dy.shape);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    T dbeta = 0, dgamma = 0;
    for (int n = 0; n < dy.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        dbeta += dy.data[off + j];
        dgamma += dy.data[off + j] * rec.xhat[off + j];
      }
    }
    grad.beta[c] += dbeta;
    grad.gamma[c] += dgamma;
    const T k = bn.gamma[c] * rec.invstd[c];
    for (int n = 0; n < dy.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        if (mode == BnMode::kTraining)
          dx.data[off + j] =
              k / count * (count * dy.data[off + j] - dbeta - rec.xhat[off + j] * dgamma);
        else
          dx.data[off + j] = k * dy.data[off + j];
      }
    }
  }
  return dx;
}

template <class T>
void relu_inplace(Activations<T>& x) {
  for (T& v : x.data) v = v > T(0) ? v : T(0);
}

// dy masked by (out > 0), in place.
template <class T>
void relu_backward_inplace(Activations<T>& dy, const Activations<T>& out) {
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    if (!(out.data[i] > T(0))) dy.data[i] = T(0);
}

template <class T>
struct BlockRecord {
  Activations<T> input;
  BnRecord<T> bn1;
  Activations<T> r1;
  BnRecord<T> bn2;
  Activations<T> out;
};

template <class T>
Activations<T> block_forward(const Activations<T>& x, const ResBlock<T>& b, BnMode mode,
                             double eps, BlockRecord<T>* rec) {
  BnRecord<T> bn1, bn2;
  Activations<T> r1 = bn_forward(conv_forward(x, b.conv1), b.bn1, mode, eps, bn1);
  relu_inplace(r1);
  Activations<T> out = bn_forward(conv_forward(r1, b.conv2), b.bn2, mode, eps, bn2);
  if (b.has_shortcut) {
    const Activations<T> s = conv_forward(x, b.shortcut);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += s.data[i];
  } else {
    if (x.shape != out.shape) throw ConfigError("resblock: identity shortcut shape mismatch");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += x.data[i];
  }
  relu_inplace(out);
  if (rec) {
    rec->input = x;
    rec->bn1 = std::move(bn1);
    rec->r1 = std::move(r1);
    rec->bn2 = std::move(bn2);
    rec->out = out;
  }
  return out;
}

template <class T>
Activations<T> block_backward(const BlockRecord<T>& rec, const ResBlock<T>& b, BnMode mode,
                              Activations<T> dout, ResBlock<T>& g) {
  relu_backward_inplace(dout, rec.out);
  const Activations<T> dc2 = bn_backward(dout, b.bn2, mode, rec.bn2, g.bn2);
  Activations<T> dr1 = conv_backward(rec.r1, b.conv2, dc2, g.conv2);
  relu_backward_inplace(dr1, rec.r1);
  const Activations<T> dc1 = bn_backward(dr1, b.bn1, mode, rec.bn1, g.bn1);
  Activations<T> dx = conv_backward(rec.input, b.conv1, dc1, g.conv1);
  if (b.has_shortcut) {
    const Activations<T> ds = conv_backward(rec.input, b.shortcut, dout, g.shortcut);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
  } else {
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dout.data[i];
  }
  return dx;
}

template <class T>
T elu(T x) {
  return x > T(0) ? x : std::expm1(x);
}

template <class T>
T elu_grad(T x) {
  return x > T(0) ? T(1) : std::exp(x);
}

template <class T>
bool all_finite(const std::vector<T>& v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

}  // namespace

template <class T>
Activations<T> resblock_forward(const Activations<T>& x, const ResBlock<T>& block, BnMode mode,
                                double eps) {
  return block_forward<T>(x, block, mode, eps, nullptr);
}

// ---------------------------------------------------------------------------
// Full encoder

template <class T>
struct ForwardPass {
  BnMode mode = BnMode::kInference;
  bool detach_attention = false;
  int n = 0;
  Activations<T> input;
  BnRecord<T> front_bn;
  Activations<T> front_out;
  std::vector<BlockRecord<T>> blocks;
  Activations<T> attention_in;
  std::vector<T> flat;       // n x flatten
  std::vector<T> head_pre;   // n x d x o
  std::vector<T> head_act;   // n x d x o
  std::vector<T> raw;        // n x d
  std::vector<T> norms;      // n
  std::vector<T> embeddings; // n x d
};

template <class T>
EncoderTape<T>::EncoderTape() = default;
template <class T>
EncoderTape<T>::~EncoderTape() = default;
template <class T>
EncoderTape<T>::EncoderTape(EncoderTape&&) noexcept = default;
template <class T>
EncoderTape<T>& EncoderTape<T>::operator=(EncoderTape&&) noexcept = default;

template <class T>
const std::vector<T>& EncoderTape<T>::embeddings() const {
  return pass_->embeddings;
}

template <class T>
int EncoderTape<T>::batch() const {
  return pass_->n;
}

template <class T>
std::vector<std::pair<std::vector<T>, std::vector<T>>> EncoderTape<T>::batch_stats() const {
  std::vector<std::pair<std::vector<T>, std::vector<T>>> out;
  out.emplace_back(pass_->front_bn.mean, pass_->front_bn.var);
  for (const auto& b : pass_->blocks) {
    out.emplace_back(b.bn1.mean, b.bn1.var);
    out.emplace_back(b.bn2.mean, b.bn2.var);
  }
  return out;
}

namespace {

template <class T>
Activations<T> attention_forward_batch(const Activations<T>& x, const Attention<T>& p) {
  if (x.shape != p.shape) throw ConfigError("attention: feature map shape mismatch");
  Activations<T> y(x.n, x.shape);
  const auto [C, F, Tn] = p.shape;
  const std::size_t plane = static_cast<std::size_t>(F) * Tn;
  const std::ptrdiff_t jobs = static_cast<std::ptrdiff_t>(x.n) * C;
#pragma omp parallel
  {
    std::vector<T> a_spect(static_cast<std::size_t>(F)), a_temp(static_cast<std::size_t>(Tn));
#pragma omp for schedule(static)
    for (std::ptrdiff_t job = 0; job < jobs; ++job) {
      const int c = static_cast<int>(job % C);
      const std::size_t off = static_cast<std::size_t>(job) * plane;
      channel_forward(x.data.data() + off, p.w_spect.data() + static_cast<std::size_t>(c) * Tn,
                      p.w_temp.data() + static_cast<std::size_t>(c) * F, p.scale, F, Tn,
                      a_spect.data(), a_temp.data(), y.data.data() + off);
    }
  }
  return y;
}

template <class T>
Activations<T> attention_backward_batch(const Activations<T>& x, const Attention<T>& p,
                                        const Activations<T>& dy, Attention<T>& g, bool detach) {
  Activations<T> dx(x.n, x.shape);
  const auto [C, F, Tn] = p.shape;
  const std::size_t plane = static_cast<std::size_t>(F) * Tn;
#pragma omp parallel
  {
    std::vector<T> a_spect(static_cast<std::size_t>(F)), a_temp(static_cast<std::size_t>(Tn)),
        scratch;
#pragma omp for schedule(static)
    for (int c = 0; c < C; ++c) {
      const T* ws = p.w_spect.data() + static_cast<std::size_t>(c) * Tn;
      const T* wt = p.w_temp.data() + static_cast<std::size_t>(c) * F;
      for (int n = 0; n < x.n; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
        channel_weights(x.data.data() + off, ws, wt, F, Tn, a_spect.data(), a_temp.data());
        channel_backward(x.data.data() + off, ws, wt, p.scale, F, Tn, a_spect.data(),
                         a_temp.data(), dy.data.data() + off, dx.data.data() + off,
                         g.w_spect.data() + static_cast<std::size_t>(c) * Tn,
                         g.w_temp.data() + static_cast<std::size_t>(c) * F, detach, scratch);
      }
    }
  }
  return dx;
}

}  // namespace

template <class T>
EncoderTape<T> encoder_forward(std::span<const T> inputs, int batch, const EncoderParams<T>& params,
                               BnMode mode, bool detach_attention) {
  const EncoderArch& arch = params.arch;
  const MapShape in_shape{1, arch.n_mels, arch.n_frames};
  if (batch <= 0 || inputs.size() != static_cast<std::size_t>(batch) * in_shape.size())
    throw ConfigError("encoder: input size does not match batch x n_mels x n_frames");
  const double eps = arch.bn_eps;

  EncoderTape<T> tape;
  tape.pass_ = std::make_unique<ForwardPass<T>>();
  ForwardPass<T>& fp = *tape.pass_;
  fp.mode = mode;
  fp.detach_attention = detach_attention;
  fp.n = batch;
  fp.input = Activations<T>(batch, in_shape);
  std::copy(inputs.begin(), inputs.end(), fp.input.data.begin());

  Activations<T> h = bn_forward(conv_forward(fp.input, params.front), params.front_bn, mode, eps,
                                fp.front_bn);
  relu_inplace(h);
  fp.front_out = h;
  const auto maybe_attend = [&](int stage) {
    if (arch.attention_after != stage) return;
    fp.attention_in = h;
    h = attention_forward_batch(h, params.attention);
  };
  maybe_attend(0);
  fp.blocks.resize(params.blocks.size());
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    h = block_forward(h, params.blocks[b], mode, eps, &fp.blocks[b]);
    maybe_attend(static_cast<int>(b) + 1);
  }

  const SplitHead<T>& head = params.head;
  const auto d = static_cast<std::size_t>(head.branches);
  const auto o = static_cast<std::size_t>(head.hidden);
  const auto in = static_cast<std::size_t>(head.input);
  const std::size_t flat_size = h.shape.size();
  if (flat_size != d * in) throw ConfigError("encoder: flatten size does not match split head");
  fp.flat = std::move(h.data);
  fp.head_pre.assign(static_cast<std::size_t>(batch) * d * o, T(0));
  fp.head_act.assign(fp.head_pre.size(), T(0));
  fp.raw.assign(static_cast<std::size_t>(batch) * d, T(0));
  fp.norms.assign(static_cast<std::size_t>(batch), T(0));
  fp.embeddings.assign(fp.raw.size(), T(0));
#pragma omp parallel for schedule(static)
  for (int n = 0; n < batch; ++n) {
    const T* z = fp.flat.data() + static_cast<std::size_t>(n) * flat_size;
    T* pre = fp.head_pre.data() + static_cast<std::size_t>(n) * d * o;
    T* act = fp.head_act.data() + static_cast<std::size_t>(n) * d * o;
    T* y = fp.raw.data() + static_cast<std::size_t>(n) * d;
    for (std::size_t b = 0; b < d; ++b) {
      const T* zb = z + b * in;
      T out = head.b2[b];
      for (std::size_t j = 0; j < o; ++j) {
        const T* w = head.w1.data() + (b * o + j) * in;
        T acc = head.b1[b * o + j];
        for (std::size_t k = 0; k < in; ++k) acc += w[k] * zb[k];
        pre[b * o + j] = acc;
        act[b * o + j] = elu(acc);
        out += head.w2[b * o + j] * act[b * o + j];
      }
      y[b] = out;
    }
    T sq = 0;
    for (std::size_t b = 0; b < d; ++b) sq += y[b] * y[b];
    const T norm = std::sqrt(sq);
    fp.norms[static_cast<std::size_t>(n)] = norm;
    T* e = fp.embeddings.data() + static_cast<std::size_t>(n) * d;
    for (std::size_t b = 0; b < d; ++b) e[b] = y[b] / norm;
  }
  if (!all_finite(fp.embeddings) ||
      std::any_of(fp.norms.begin(), fp.norms.end(), [](T v) { return !(v > T(0)); }))
    throw NumericError("encoder: non-finite activations");
  return tape;
}

template <class T>
void encoder_backward(const EncoderTape<T>& tape, const EncoderParams<T>& params,
                      std::span<const T> upstream, EncoderParams<T>& grads) {
  const ForwardPass<T>& fp = *tape.pass_;
  const EncoderArch& arch = params.arch;
  const SplitHead<T>& head = params.head;
  const auto d = static_cast<std::size_t>(head.branches);
  const auto o = static_cast<std::size_t>(head.hidden);
  const auto in = static_cast<std::size_t>(head.input);
  const int batch = fp.n;
  if (upstream.size() != static_cast<std::size_t>(batch) * d)
    throw ConfigError("encoder_backward: upstream gradient has wrong size");

  // L2 normalization: dy = (de - e <e, de>) / |y|
  std::vector<T> dy(upstream.size());
  for (int n = 0; n < batch; ++n) {
    const T* e = fp.embeddings.data() + static_cast<std::size_t>(n) * d;
    const T* g = upstream.data() + static_cast<std::size_t>(n) * d;
    T dot = 0;
    for (std::size_t b = 0; b < d; ++b) dot += e[b] * g[b];
    for (std::size_t b = 0; b < d; ++b)
      dy[static_cast<std::size_t>(n) * d + b] = (g[b] - e[b] * dot) / fp.norms[static_cast<std::size_t>(n)];
  }

  const MapShape last = arch.shape_chain().back();
  Activations<T> dh(batch, last);
  const std::size_t flat_size = last.size();
  SplitHead<T>& gh = grads.head;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(d); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (int n = 0; n < batch; ++n) {
      const std::size_t nn = static_cast<std::size_t>(n);
      const T g = dy[nn * d + b];
      const T* zb = fp.flat.data() + nn * flat_size + b * in;
      T* dz = dh.data.data() + nn * flat_size + b * in;
      gh.b2[b] += g;
      for (std::size_t j = 0; j < o; ++j) {
        const std::size_t idx = nn * d * o + b * o + j;
        gh.w2[b * o + j] += g * fp.head_act[idx];
        const T dpre = g * head.w2[b * o + j] * elu_grad(fp.head_pre[idx]);
        gh.b1[b * o + j] += dpre;
        T* dw = gh.w1.data() + (b * o + j) * in;
        const T* w = head.w1.data() + (b * o + j) * in;
        for (std::size_t k = 0; k < in; ++k) {
          dw[k] += dpre * zb[k];
          dz[k] += dpre * w[k];
        }
      }
    }
  }

  const auto maybe_attend_back = [&](int stage) {
    if (arch.attention_after != stage) return;
    dh = attention_backward_batch(fp.attention_in, params.attention, dh, grads.attention,
                                  fp.detach_attention);
  };
  for (std::size_t bi = params.blocks.size(); bi-- > 0;) {
    maybe_attend_back(static_cast<int>(bi) + 1);
    dh = block_backward(fp.blocks[bi], params.blocks[bi], fp.mode, std::move(dh), grads.blocks[bi]);
  }
  maybe_attend_back(0);
  relu_backward_inplace(dh, fp.front_out);
  const Activations<T> dc = bn_backward(dh, params.front_bn, fp.mode, fp.front_bn, grads.front_bn);
  conv_backward(fp.input, params.front, dc, grads.front, false);
}

template <class T>
std::vector<T> encode(std::span<const T> spec, const EncoderParams<T>& params) {
  return encoder_forward<T>(spec, 1, params, BnMode::kInference).embeddings();
}

std::vector<float> encode(const LogMelSpec& spec, const EncoderParams<float>& params) {
  if (spec.n_mels != params.arch.n_mels || spec.n_frames != params.arch.n_frames)
    throw ConfigError("encode: spectrogram shape does not match encoder input");
  return encode<float>(spec.values, params);
}

template <class T>
EncoderParams<T> encode_backward(std::span<const T> spec, const EncoderParams<T>& params,
                                 std::span<const T> upstream, BnMode mode) {
  const auto tape = encoder_forward<T>(spec, 1, params, mode);
  EncoderParams<T> grads = zeros_like(params);
  encoder_backward<T>(tape, params, upstream, grads);
  return grads;
}

template <class T>
void update_running_stats(EncoderParams<T>& params, const EncoderTape<T>& tape) {
  const auto stats = tape.batch_stats();
  const T m = static_cast<T>(params.arch.bn_momentum);
  std::size_t i = 0;
  const auto fold = [&](BatchNorm<T>& bn, const MapShape& shape) {
    const auto& [mean, var] = stats[i++];
    const double count = static_cast<double>(shape.freq) * shape.time * tape.batch();
    const T unbias = count > 1 ? static_cast<T>(count / (count - 1)) : T(1);
    for (int c = 0; c < bn.channels; ++c) {
      bn.running_mean[c] = m * bn.running_mean[c] + (T(1) - m) * mean[c];
      bn.running_var[c] = m * bn.running_var[c] + (T(1) - m) * var[c] * unbias;
    }
  };
  const auto chain = params.arch.shape_chain();
  fold(params.front_bn, chain[0]);
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    fold(params.blocks[b].bn1, chain[b + 1]);
    fold(params.blocks[b].bn2, chain[b + 1]);
  }
}

std::vector<std::vector<float>> encode_batch(const std::vector<LogMelSpec>& specs,
                                             const EncoderParams<float>& params) {
  constexpr std::size_t kChunk = 32;
  const std::size_t in_size = static_cast<std::size_t>(params.arch.n_mels) * params.arch.n_frames;
  const auto d = static_cast<std::size_t>(params.arch.embedding_dim);
  std::vector<std::vector<float>> out;
  out.reserve(specs.size());
  std::vector<float> buffer;
  for (std::size_t begin = 0; begin < specs.size(); begin += kChunk) {
    const std::size_t end = std::min(specs.size(), begin + kChunk);
    buffer.clear();
    for (std::size_t i = begin; i < end; ++i) {
      if (specs[i].values.size() != in_size)
        throw ConfigError("encode_batch: spectrogram shape does not match encoder input");
      buffer.insert(buffer.end(), specs[i].values.begin(), specs[i].values.end());
    }
    const auto tape = encoder_forward<float>(buffer, static_cast<int>(end - begin), params,
                                             BnMode::kInference);
    const auto& e = tape.embeddings();
    for (std::size_t i = 0; i < end - begin; ++i)
      out.emplace_back(e.begin() + static_cast<std::ptrdiff_t>(i * d),
                       e.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return out;
}

#define AFP_INSTANTIATE(T)                                                                      \
  template EncoderParams<T> init_encoder<T>(const EncoderArch&, std::uint64_t);                 \
  template EncoderParams<T> zeros_like<T>(const EncoderParams<T>&);                             \
  template std::vector<T> attention_mask<T>(std::span<const T>, const Attention<T>&);           \
  template std::vector<T> apply_attention<T>(std::span<const T>, std::span<const T>);           \
  template void attention_backward<T>(std::span<const T>, const Attention<T>&,                  \
                                      std::span<const T>, std::span<T>, std::span<T>,           \
                                      std::span<T>, bool);                                      \
  template Activations<T> resblock_forward<T>(const Activations<T>&, const ResBlock<T>&,        \
                                              BnMode, double);                                  \
  template class EncoderTape<T>;                                                                \
  template EncoderTape<T> encoder_forward<T>(std::span<const T>, int, const EncoderParams<T>&,  \
                                             BnMode, bool);                                     \
  template void encoder_backward<T>(const EncoderTape<T>&, const EncoderParams<T>&,             \
                                    std::span<const T>, EncoderParams<T>&);                     \
  template std::vector<T> encode<T>(std::span<const T>, const EncoderParams<T>&);               \
  template EncoderParams<T> encode_backward<T>(std::span<const T>, const EncoderParams<T>&,     \
                                               std::span<const T>, BnMode);                     \
  template void update_running_stats<T>(EncoderParams<T>&, const EncoderTape<T>&);

AFP_INSTANTIATE(float)
AFP_INSTANTIATE(double)

#undef AFP_INSTANTIATE

}  // namespace afp
