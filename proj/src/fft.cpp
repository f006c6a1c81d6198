#include "fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <memory>
#include <mutex>

namespace afp::detail {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <class T>
std::unique_ptr<T[], FftwFree> fftw_buffer(std::size_t n) {
  return std::unique_ptr<T[], FftwFree>(static_cast<T*>(fftw_malloc(sizeof(T) * n)));
}

}  // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  auto in = fftw_buffer<double>(n);
  auto out = fftw_buffer<fftw_complex>(n / 2 + 1);
  std::lock_guard lock(planner_mutex());
  forward_plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), out.get(), in.get(), FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) const {
  auto buf_in = fftw_buffer<double>(n_);
  auto buf_out = fftw_buffer<fftw_complex>(bins());
  std::copy(in.begin(), in.end(), buf_in.get());
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), buf_in.get(), buf_out.get());
  for (std::size_t k = 0; k < bins(); ++k) out[k] = {buf_out[k][0], buf_out[k][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) const {
  auto buf_in = fftw_buffer<fftw_complex>(bins());
  auto buf_out = fftw_buffer<double>(n_);
  for (std::size_t k = 0; k < bins(); ++k) {
    buf_in[k][0] = in[k].real();
    buf_in[k][1] = in[k].imag();
  }
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_), buf_in.get(), buf_out.get());
  std::copy(buf_out.get(), buf_out.get() + n_, out.begin());
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<double> fft_convolve(std::span<const double> x, std::span<const double> h,
                                 std::size_t out_len) {
  const std::size_t full = x.size() + h.size() - 1;
  const std::size_t n = next_pow2(full);
  RealFft fft(n);
  std::vector<double> a(n, 0.0), b(n, 0.0);
  std::copy(x.begin(), x.end(), a.begin());
  std::copy(h.begin(), h.end(), b.begin());
  std::vector<std::complex<double>> fa(fft.bins()), fb(fft.bins());
  fft.forward(a, fa);
  fft.forward(b, fb);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  fft.inverse(fa, a);
  std::vector<double> y(out_len, 0.0);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < std::min(out_len, full); ++i) y[i] = a[i] * scale;
  return y;
}

}  // namespace afp::detail
