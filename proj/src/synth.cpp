#include "afp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "afp/error.hpp"

namespace afp {

namespace {

// exp(z) of one-pole low-passed Gaussian noise, unit mean power before exp.
std::vector<double> noise_envelope(std::size_t n, int rate, double cutoff_hz, double depth, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double a = std::exp(-2.0 * std::numbers::pi * cutoff_hz / rate);
  const double gain = std::sqrt(1.0 - a * a);  // keeps the filtered variance at 1
  std::vector<double> env(n);
  double state = gauss(rng);
  for (std::size_t i = 0; i < n; ++i) {
    state = a * state + gain * gauss(rng);
    env[i] = std::exp(depth * state);
  }
  return env;
}

void add_note(std::vector<double>& out, std::size_t first, std::size_t length, double f0, int rate,
              Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double nyquist_guard = 0.45 * rate;
  const double decay = 2.0 + 6.0 * u(rng);  // 1/s
  const auto attack = static_cast<std::size_t>(0.01 * rate);
  const auto release = static_cast<std::size_t>(0.01 * rate);
  const int partials = 1 + static_cast<int>(u(rng) * 4.0);
  for (int h = 1; h <= partials; ++h) {
    const double f = f0 * h;
    if (f >= nyquist_guard) break;
    const double amp = (0.5 + 0.5 * u(rng)) / h;
    // Phasor recurrence instead of per-sample sin().
    const std::complex<double> step = std::polar(1.0, 2.0 * std::numbers::pi * f / rate);
    std::complex<double> phasor = std::polar(1.0, 2.0 * std::numbers::pi * u(rng));
    for (std::size_t i = 0; i < length && first + i < out.size(); ++i) {
      double env = std::exp(-decay * static_cast<double>(i) / rate);
      if (i < attack) env *= static_cast<double>(i) / attack;
      if (i + release > length) env *= static_cast<double>(length - i) / release;
      out[first + i] += amp * env * phasor.imag();
      phasor *= step;
      if ((i & 1023) == 0) phasor /= std::abs(phasor);
    }
  }
}

}  // namespace

Waveform synth_track(double duration_s, int sample_rate, Rng& rng) {
  if (!(duration_s > 0.0) || sample_rate <= 0) throw InputError("synth_track: duration and rate must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  std::vector<double> mix(n, 0.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int voices = 2 + static_cast<int>(u(rng) * 2.0);
  for (int v = 0; v < voices; ++v) {
    std::vector<double> voice(n, 0.0);
    const int low = 40 + 12 * v;  // MIDI register per voice
    std::size_t t = 0;
    while (t < n) {
      const auto length = static_cast<std::size_t>((0.1 + 0.4 * u(rng)) * sample_rate);
      if (u(rng) > 0.15) {
        const int midi = low + static_cast<int>(u(rng) * 36.0);
        add_note(voice, t, length, 440.0 * std::pow(2.0, (midi - 69) / 12.0), sample_rate, rng);
      }
      t += length;
    }
    const auto env = noise_envelope(n, sample_rate, 4.0, 0.5, rng);
    const double level = 0.5 + 0.5 * u(rng);
    for (std::size_t i = 0; i < n; ++i) mix[i] += level * env[i] * voice[i];
  }

  double power = 0.0;
  for (double x : mix) power += x * x;
  const double signal_rms = std::sqrt(power / static_cast<double>(n));
  const NoiseClip bed = synth_noise(NoiseKind::kPink, duration_s, sample_rate, rng);
  const double bed_gain = signal_rms * std::pow(10.0, -30.0 / 20.0);
  for (std::size_t i = 0; i < n && i < bed.samples.size(); ++i) mix[i] += bed_gain * bed.samples[i];

  double peak = 0.0;
  for (double x : mix) peak = std::max(peak, std::abs(x));
  Waveform w{std::vector<float>(n), sample_rate};
  const double scale = peak > 0.0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = static_cast<float>(mix[i] * scale);
  return w;
}

}  // namespace afp
