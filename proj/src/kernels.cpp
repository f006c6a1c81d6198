#include "afp/kernels.hpp"

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <algorithm>
#include <vector>

namespace afp::kernels {

template <class T>
void conv2d_forward_reference(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                              std::span<const T> bias, std::span<T> out) {
  const int oh = s.out_h(), ow = s.out_w(), k = s.kernel;
  for (int o = 0; o < s.out_channels; ++o)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T acc = bias.empty() ? T(0) : bias[o];
        for (int i = 0; i < s.in_channels; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * s.stride + ky - s.pad();
              const int ix = ox * s.stride + kx - s.pad();
              if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
              acc += weight[((static_cast<std::size_t>(o) * s.in_channels + i) * k + ky) * k + kx] *
                     in[(static_cast<std::size_t>(i) * s.in_h + iy) * s.in_w + ix];
            }
        out[(static_cast<std::size_t>(o) * oh + oy) * ow + ox] = acc;
      }
}

template <class T>
void conv2d_backward_input_reference(const ConvShape& s, std::span<const T> dout,
                                     std::span<const T> weight, std::span<T> din) {
  const int oh = s.out_h(), ow = s.out_w(), k = s.kernel;
  std::fill(din.begin(), din.end(), T(0));
  for (int o = 0; o < s.out_channels; ++o)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const T g = dout[(static_cast<std::size_t>(o) * oh + oy) * ow + ox];
        for (int i = 0; i < s.in_channels; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * s.stride + ky - s.pad();
              const int ix = ox * s.stride + kx - s.pad();
              if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
              din[(static_cast<std::size_t>(i) * s.in_h + iy) * s.in_w + ix] +=
                  g * weight[((static_cast<std::size_t>(o) * s.in_channels + i) * k + ky) * k + kx];
            }
      }
}

template <class T>
void conv2d_backward_weight_reference(const ConvShape& s, std::span<const T> in,
                                      std::span<const T> dout, std::span<T> dweight,
                                      std::span<T> dbias) {
  const int oh = s.out_h(), ow = s.out_w(), k = s.kernel;
  for (int o = 0; o < s.out_channels; ++o)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const T g = dout[(static_cast<std::size_t>(o) * oh + oy) * ow + ox];
        if (!dbias.empty()) dbias[o] += g;
        for (int i = 0; i < s.in_channels; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * s.stride + ky - s.pad();
              const int ix = ox * s.stride + kx - s.pad();
              if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
              dweight[((static_cast<std::size_t>(o) * s.in_channels + i) * k + ky) * k + kx] +=
                  g * in[(static_cast<std::size_t>(i) * s.in_h + iy) * s.in_w + ix];
            }
      }
}

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<Mat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const Mat<T>>;

// Samples per GEMM chunk: bounded im2col buffer, chosen from the shape alone so
// the reduction order never depends on the thread count.
int chunk_samples(const ConvShape& s, int batch) {
  constexpr std::size_t kBudget = std::size_t{1} << 22;  // floats in one column buffer
  const std::size_t per = static_cast<std::size_t>(s.in_channels) * s.kernel * s.kernel *
                          static_cast<std::size_t>(s.out_h()) * s.out_w();
  return static_cast<int>(std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per, 1), 1,
                                                  static_cast<std::size_t>(batch)));
}

// col[(i*k + ky)*k + kx][c0 + oy*ow + ox] = in[i][oy*st + ky - p][ox*st + kx - p] (0 outside).
template <class T>
void im2col(const ConvShape& s, const T* in, T* col, std::size_t ld, std::size_t c0) {
  const int oh = s.out_h(), ow = s.out_w(), k = s.kernel, st = s.stride, p = s.pad();
  for (int i = 0; i < s.in_channels; ++i)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((i * k + ky) * k + kx) * ld + c0;
        const T* src = in + static_cast<std::size_t>(i) * s.in_h * s.in_w;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * st + ky - p;
          T* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= s.in_h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src_row = src + static_cast<std::size_t>(iy) * s.in_w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * st + kx - p;
            dst[ox] = (ix >= 0 && ix < s.in_w) ? src_row[ix] : T(0);
          }
        }
      }
}

// Adjoint of im2col: din[i][iy][ix] += col[...][c0 + ...].
template <class T>
void col2im(const ConvShape& s, const T* col, std::size_t ld, std::size_t c0, T* din) {
  const int oh = s.out_h(), ow = s.out_w(), k = s.kernel, st = s.stride, p = s.pad();
  for (int i = 0; i < s.in_channels; ++i)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((i * k + ky) * k + kx) * ld + c0;
        T* dst = din + static_cast<std::size_t>(i) * s.in_h * s.in_w;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * st + ky - p;
          if (iy < 0 || iy >= s.in_h) continue;
          T* dst_row = dst + static_cast<std::size_t>(iy) * s.in_w;
          const T* src = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * st + kx - p;
            if (ix >= 0 && ix < s.in_w) dst_row[ix] += src[ox];
          }
        }
      }
}

// Gathers [n][o][plane] for a chunk into an O x (chunk*plane) matrix, or back.
template <class T>
void pack_channels(const ConvShape& s, const T* src, int count, T* dst) {
  const auto plane = static_cast<std::size_t>(s.out_h()) * s.out_w();
  const std::size_t ld = plane * static_cast<std::size_t>(count);
  for (int n = 0; n < count; ++n)
    for (int o = 0; o < s.out_channels; ++o)
      std::copy_n(src + (static_cast<std::size_t>(n) * s.out_channels + o) * plane, plane,
                  dst + static_cast<std::size_t>(o) * ld + static_cast<std::size_t>(n) * plane);
}

}  // namespace

template <class T>
void conv2d_forward(const ConvShape& s, int batch, std::span<const T> in,
                    std::span<const T> weight, std::span<const T> bias, std::span<T> out) {
  const int chunk = chunk_samples(s, batch);
  const int chunks = (batch + chunk - 1) / chunk;
  const auto R = static_cast<std::size_t>(s.in_channels) * s.kernel * s.kernel;
  const auto plane = static_cast<std::size_t>(s.out_h()) * s.out_w();
  const ConstMapMat<T> w(weight.data(), s.out_channels, static_cast<Eigen::Index>(R));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < chunks; ++c) {
    const int first = c * chunk;
    const int count = std::min(chunk, batch - first);
    const std::size_t P = plane * static_cast<std::size_t>(count);
    std::vector<T> col(R * P);
    for (int n = 0; n < count; ++n)
      im2col(s, in.data() + static_cast<std::size_t>(first + n) * s.in_size(), col.data(), P,
             static_cast<std::size_t>(n) * plane);
    Mat<T> y = w * ConstMapMat<T>(col.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
    for (int n = 0; n < count; ++n)
      for (int o = 0; o < s.out_channels; ++o) {
        T* dst = out.data() + static_cast<std::size_t>(first + n) * s.out_size() + static_cast<std::size_t>(o) * plane;
        const T* src = y.data() + static_cast<std::size_t>(o) * P + static_cast<std::size_t>(n) * plane;
        const T b = bias.empty() ? T(0) : bias[o];
        for (std::size_t j = 0; j < plane; ++j) dst[j] = src[j] + b;
      }
  }
}

template <class T>
void conv2d_backward_input(const ConvShape& s, int batch, std::span<const T> dout,
                           std::span<const T> weight, std::span<T> din) {
  const int chunk = chunk_samples(s, batch);
  const int chunks = (batch + chunk - 1) / chunk;
  const auto R = static_cast<std::size_t>(s.in_channels) * s.kernel * s.kernel;
  const auto plane = static_cast<std::size_t>(s.out_h()) * s.out_w();
  const ConstMapMat<T> w(weight.data(), s.out_channels, static_cast<Eigen::Index>(R));
  std::fill(din.begin(), din.end(), T(0));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < chunks; ++c) {
    const int first = c * chunk;
    const int count = std::min(chunk, batch - first);
    const std::size_t P = plane * static_cast<std::size_t>(count);
    std::vector<T> g(static_cast<std::size_t>(s.out_channels) * P);
    pack_channels(s, dout.data() + static_cast<std::size_t>(first) * s.out_size(), count, g.data());
    const Mat<T> dcol = w.transpose() * ConstMapMat<T>(g.data(), s.out_channels, static_cast<Eigen::Index>(P));
    for (int n = 0; n < count; ++n)
      col2im(s, dcol.data(), P, static_cast<std::size_t>(n) * plane,
             din.data() + static_cast<std::size_t>(first + n) * s.in_size());
  }
}

template <class T>
void conv2d_backward_weight(const ConvShape& s, int batch, std::span<const T> in,
                            std::span<const T> dout, std::span<T> dweight, std::span<T> dbias) {
  const int chunk = chunk_samples(s, batch);
  const int chunks = (batch + chunk - 1) / chunk;
  const auto R = static_cast<std::size_t>(s.in_channels) * s.kernel * s.kernel;
  const auto plane = static_cast<std::size_t>(s.out_h()) * s.out_w();
  const auto O = static_cast<std::size_t>(s.out_channels);
  std::vector<Mat<T>> partial_w(static_cast<std::size_t>(chunks));
  std::vector<std::vector<T>> partial_b(static_cast<std::size_t>(chunks));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < chunks; ++c) {
    const int first = c * chunk;
    const int count = std::min(chunk, batch - first);
    const std::size_t P = plane * static_cast<std::size_t>(count);
    std::vector<T> col(R * P);
    for (int n = 0; n < count; ++n)
      im2col(s, in.data() + static_cast<std::size_t>(first + n) * s.in_size(), col.data(), P,
             static_cast<std::size_t>(n) * plane);
    std::vector<T> g(O * P);
    pack_channels(s, dout.data() + static_cast<std::size_t>(first) * s.out_size(), count, g.data());
    const ConstMapMat<T> gm(g.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
    partial_w[c] = gm * ConstMapMat<T>(col.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P)).transpose();
    if (!dbias.empty()) {
      auto& b = partial_b[c];
      b.resize(O);
      // Plain loop: Eigen's vectorized sum() peels by alignment, which would
      // make the summation order depend on the allocation address.
      for (std::size_t o = 0; o < O; ++o) {
        T acc = 0;
        for (std::size_t j = 0; j < P; ++j) acc += g[o * P + j];
        b[o] = acc;
      }
    }
  }
  MapMat<T> dw(dweight.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(R));
  for (int c = 0; c < chunks; ++c) {
    dw += partial_w[c];
    if (!dbias.empty())
      for (std::size_t o = 0; o < O; ++o) dbias[o] += partial_b[c][o];
  }
}

void dot_rows_reference(std::span<const float> rows, std::size_t dim, std::span<const float> q,
                        std::span<float> scores) {
  const std::size_t n = rows.size() / dim;
  for (std::size_t r = 0; r < n; ++r) {
    float acc = 0.0f;
    for (std::size_t j = 0; j < dim; ++j) acc += rows[r * dim + j] * q[j];
    scores[r] = acc;
  }
}

float dot(std::span<const float> a, std::span<const float> b) {
  constexpr std::size_t kLanes = 8;
  float lane[kLanes] = {};
  const std::size_t n = a.size();
  const std::size_t body = n - n % kLanes;
  for (std::size_t j = 0; j < body; j += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) lane[l] += a[j + l] * b[j + l];
  for (std::size_t j = body; j < n; ++j) lane[j - body] += a[j] * b[j];
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

void dot_rows(std::span<const float> rows, std::size_t dim, std::span<const float> q,
              std::span<float> scores) {
  const auto n = static_cast<std::ptrdiff_t>(rows.size() / dim);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r)
    scores[static_cast<std::size_t>(r)] = dot(rows.subspan(static_cast<std::size_t>(r) * dim, dim), q);
}

#define AFP_INSTANTIATE(T)                                                                     \
  template void conv2d_forward_reference<T>(const ConvShape&, std::span<const T>,              \
                                            std::span<const T>, std::span<const T>,            \
                                            std::span<T>);                                     \
  template void conv2d_backward_input_reference<T>(const ConvShape&, std::span<const T>,       \
                                                   std::span<const T>, std::span<T>);          \
  template void conv2d_backward_weight_reference<T>(const ConvShape&, std::span<const T>,      \
                                                    std::span<const T>, std::span<T>,          \
                                                    std::span<T>);                             \
  template void conv2d_forward<T>(const ConvShape&, int, std::span<const T>, std::span<const T>, \
                                  std::span<const T>, std::span<T>);                           \
  template void conv2d_backward_input<T>(const ConvShape&, int, std::span<const T>,            \
                                         std::span<const T>, std::span<T>);                    \
  template void conv2d_backward_weight<T>(const ConvShape&, int, std::span<const T>,           \
                                          std::span<const T>, std::span<T>, std::span<T>);

AFP_INSTANTIATE(float)
AFP_INSTANTIATE(double)

#undef AFP_INSTANTIATE

}  // namespace afp::kernels
