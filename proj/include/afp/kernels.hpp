#pragma once

// Compute kernels for the encoder and the search paths. Each parallel kernel
// has a plain serial reference twin used by the tests and the benchmark.

#include <cstddef>
#include <span>

namespace afp::kernels {

/// 2-D convolution geometry for one sample: square kernel, symmetric zero
/// padding of k/2, equal stride on both axes.
struct ConvShape {
  int in_channels = 1;
  int out_channels = 1;
  int in_h = 1;
  int in_w = 1;
  int kernel = 3;
  int stride = 1;

  int pad() const { return kernel / 2; }
  int out_h() const { return (in_h + 2 * pad() - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad() - kernel) / stride + 1; }
  std::size_t in_size() const { return static_cast<std::size_t>(in_channels) * in_h * in_w; }
  std::size_t out_size() const { return static_cast<std::size_t>(out_channels) * out_h() * out_w(); }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

// Serial references: direct loops with bounds checks on every tap.
template <class T>
void conv2d_forward_reference(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                              std::span<const T> bias, std::span<T> out);
template <class T>
void conv2d_backward_input_reference(const ConvShape& s, std::span<const T> dout,
                                     std::span<const T> weight, std::span<T> din);
template <class T>
void conv2d_backward_weight_reference(const ConvShape& s, std::span<const T> in,
                                      std::span<const T> dout, std::span<T> dweight,
                                      std::span<T> dbias);

// Batched kernels; inputs are [batch][channel][h][w]. Bias may be empty.
// Work is split so every output element is produced by exactly one thread in a
// fixed order, which keeps results independent of the thread count.
template <class T>
void conv2d_forward(const ConvShape& s, int batch, std::span<const T> in,
                    std::span<const T> weight, std::span<const T> bias, std::span<T> out);
/// Overwrites din.
template <class T>
void conv2d_backward_input(const ConvShape& s, int batch, std::span<const T> dout,
                           std::span<const T> weight, std::span<T> din);
/// Accumulates into dweight (and dbias when non-empty).
template <class T>
void conv2d_backward_weight(const ConvShape& s, int batch, std::span<const T> in,
                            std::span<const T> dout, std::span<T> dweight, std::span<T> dbias);

/// Float dot product with a fixed eight-lane summation order. Every similarity
/// in the search paths goes through this so LSH and brute-force scores agree
/// bit for bit.
float dot(std::span<const float> a, std::span<const float> b);

/// scores[i] = dot(rows[i], q) for a row-major matrix of rows.size()/dim rows.
void dot_rows_reference(std::span<const float> rows, std::size_t dim, std::span<const float> q,
                        std::span<float> scores);
void dot_rows(std::span<const float> rows, std::size_t dim, std::span<const float> q,
              std::span<float> scores);

}  // namespace afp::kernels
