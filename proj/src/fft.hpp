#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace afp::detail {

/// Real-to-complex FFT of fixed size backed by FFTW. Plans are created under a
/// global lock; execution is thread-safe (new-array execute with per-call buffers).
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// in.size() == size(); out.size() == bins().
  void forward(std::span<const double> in, std::span<std::complex<double>> out) const;
  /// Unnormalized inverse: out = n * x for a round trip.
  void inverse(std::span<const std::complex<double>> in, std::span<double> out) const;

 private:
  std::size_t n_;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

std::size_t next_pow2(std::size_t n);

/// Linear convolution via FFT, truncated to out_len samples.
std::vector<double> fft_convolve(std::span<const double> x, std::span<const double> h,
                                 std::size_t out_len);

}  // namespace afp::detail
