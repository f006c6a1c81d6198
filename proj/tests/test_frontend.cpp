#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "afp/audio.hpp"
#include "afp/error.hpp"
#include "afp/frontend.hpp"
#include "doctest.h"

using namespace afp;

namespace {

Waveform sine(double freq, double seconds, int rate, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(std::llround(seconds * rate)));
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * freq * i / rate));
  return w;
}

// Index of the largest-magnitude DFT bin in [1, n/2), computed directly.
std::size_t peak_bin(const std::vector<float>& x) {
  const std::size_t n = x.size();
  std::size_t best = 0;
  double best_mag = -1.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += static_cast<double>(x[i]) *
             std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i % n) / n);
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  return best;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("afp_test_" + name);
}

}  // namespace

TEST_CASE("resample: 1 s at 44.1 kHz becomes 16000 samples") {
  const auto out = resample(sine(440.0, 1.0, 44100), 16000);
  CHECK(out.sample_rate == 16000);
  CHECK(out.samples.size() == 16000);
}

TEST_CASE("resample: same rate is sample-identical") {
  const auto in = sine(440.0, 0.25, 16000);
  const auto out = resample(in, 16000);
  CHECK(out.samples == in.samples);
}

TEST_CASE("resample: empty input is an error") {
  Waveform empty{{}, 44100};
  CHECK_THROWS_AS(resample(empty, 16000), InputError);
}

TEST_CASE("resample: 1 kHz sine at 48 kHz keeps its frequency at 16 kHz") {
  const auto out = resample(sine(1000.0, 0.25, 48000), 16000);
  REQUIRE(out.samples.size() == 4000);
  const auto reference = sine(1000.0, 0.25, 16000);
  CHECK(peak_bin(out.samples) == peak_bin(reference.samples));
}

TEST_CASE("resample: upsampling a 1 kHz sine leaves no images above the old Nyquist") {
  const auto up = resample(sine(1000.0, 0.1, 16000), 48000);
  REQUIRE(up.samples.size() == 4800);
  // Direct DFT over the steady-state middle; 1 kHz images would sit at 15/17 kHz.
  const std::size_t n = 2400, off = 1200;
  double total = 0.0, above = 0.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += static_cast<double>(up.samples[off + i]) *
             std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i % n) / n);
    const double e = std::norm(acc);
    total += e;
    if (k * 48000.0 / n > 8500.0) above += e;
  }
  CHECK(above / total < 1e-4);
}

TEST_CASE("segment_stream: 30 s track at L=0.96 s, H=0.1 s yields 291 segments") {
  FrontendConfig cfg;
  Waveform w{std::vector<float>(30 * 16000, 0.1f), 16000};
  const auto segs = segment_stream(w, cfg, 7);
  CHECK(segs.size() == 291);
  CHECK(segs.front().start_time == 0.0);
  CHECK(segs[10].start_time == doctest::Approx(1.0));
  CHECK(segs[5].source_track == 7);
  for (const auto& s : segs) CHECK(s.samples.size() == 15360);
}

TEST_CASE("segment_stream: exactly L gives one segment, shorter is an error") {
  FrontendConfig cfg;
  Waveform exact{std::vector<float>(15360, 0.1f), 16000};
  CHECK(segment_stream(exact, cfg).size() == 1);
  Waveform shorter{std::vector<float>(15359, 0.1f), 16000};
  CHECK_THROWS_AS(segment_stream(shorter, cfg), InputError);
}

TEST_CASE("segment_count matches direct enumeration for random durations") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    FrontendConfig cfg;
    cfg.hop_ms = std::uniform_real_distribution<double>(5.0, 300.0)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 200000)(rng);
    std::size_t expected = 0;
    while (cfg.segment_start(expected) + cfg.segment_samples() <= n) ++expected;
    CHECK(segment_count(n, cfg) == expected);
  }
}

TEST_CASE("energy_gate boundaries") {
  std::vector<float> seg(1000, 0.5f);
  const double p = 0.25;
  CHECK(energy_gate(seg, p, 0.0));  // 0 dB is kept
  CHECK(energy_gate(seg, p / 2.0, 0.0));
  CHECK(energy_gate(seg, p / 2.0, 3.0));  // +3.0103 dB
  CHECK_FALSE(energy_gate(seg, p / 2.0, 3.02));
  std::vector<float> zeros(1000, 0.0f);
  CHECK_FALSE(energy_gate(zeros, 1.0, -200.0));
}

TEST_CASE("energy_gate is monotone in segment power") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> amp(0.0f, 1.0f);
  for (int trial = 0; trial < 200; ++trial) {
    const float a = amp(rng), b = amp(rng);
    std::vector<float> lo(64, std::min(a, b)), hi(64, std::max(a, b));
    if (energy_gate(lo, 0.1, 0.0)) CHECK(energy_gate(hi, 0.1, 0.0));
  }
}

TEST_CASE("log_mel: 960 ms segment produces a 64x96 matrix") {
  FrontendConfig cfg;
  AudioSegment seg{sine(440.0, 0.96, 16000).samples, 0, 0.0};
  const auto spec = log_mel(seg, cfg);
  CHECK(spec.n_mels == 64);
  CHECK(spec.n_frames == 96);
  CHECK(spec.values.size() == 64u * 96u);
}

TEST_CASE("log_mel: silence maps to ln(floor) everywhere") {
  FrontendConfig cfg;
  AudioSegment seg{std::vector<float>(15360, 0.0f), 0, 0.0};
  const auto spec = log_mel(seg, cfg);
  const auto floor_value = static_cast<float>(std::log(cfg.log_floor));
  for (float v : spec.values) CHECK(v == floor_value);
}

TEST_CASE("log_mel: 1 kHz sine peaks in the band whose filter covers 1 kHz") {
  FrontendConfig cfg;
  AudioSegment seg{sine(1000.0, 0.96, 16000).samples, 0, 0.0};
  const auto spec = log_mel(seg, cfg);
  // Independent centre frequencies from the HTK mel formula.
  const double lo = 2595.0 * std::log10(1.0 + cfg.mel_fmin / 700.0);
  const double hi = 2595.0 * std::log10(1.0 + cfg.mel_fmax / 700.0);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[i] = 700.0 * (std::pow(10.0, (lo + (hi - lo) * i / (cfg.n_mels + 1)) / 2595.0) - 1.0);
  int covering_best = -1;
  double best_dist = 1e9;
  for (int m = 0; m < cfg.n_mels; ++m)
    if (edges[m] < 1000.0 && 1000.0 < edges[m + 2] && std::abs(edges[m + 1] - 1000.0) < best_dist) {
      best_dist = std::abs(edges[m + 1] - 1000.0);
      covering_best = m;
    }
  for (int t = 10; t < 86; ++t) {
    int argmax = 0;
    for (int m = 1; m < spec.n_mels; ++m)
      if (spec.at(m, t) > spec.at(argmax, t)) argmax = m;
    CHECK(argmax == covering_best);
  }
}

TEST_CASE("log_mel is deterministic and shifts by 2 ln g under amplitude scaling") {
  FrontendConfig cfg;
  std::mt19937_64 rng(5);
  std::normal_distribution<float> gauss(0.0f, 0.1f);
  AudioSegment seg{std::vector<float>(15360), 0, 0.0};
  for (float& v : seg.samples) v = gauss(rng);
  LogMelExtractor extractor(cfg);
  const auto a = extractor.compute(seg.samples);
  const auto b = extractor.compute(seg.samples);
  CHECK(a == b);

  const float g = 0.5f;
  AudioSegment scaled = seg;
  for (float& v : scaled.samples) v *= g;
  const auto c = extractor.compute(scaled.samples);
  const auto floor_value = std::log(cfg.log_floor);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (c.values[i] > floor_value + 1.0)
      CHECK(c.values[i] - a.values[i] == doctest::Approx(2.0 * std::log(g)).epsilon(1e-4));
  }
}

TEST_CASE("log_mel rejects a segment of the wrong length") {
  FrontendConfig cfg;
  AudioSegment seg{std::vector<float>(15000, 0.0f), 0, 0.0};
  CHECK_THROWS_AS(log_mel(seg, cfg), InputError);
}

TEST_CASE("WAV: 16-bit and float round trips, stereo downmix") {
  const auto w = sine(300.0, 0.1, 16000, 0.7);
  const auto f32 = temp_path("f32.wav");
  write_wav(f32, w, WavEncoding::kFloat32);
  CHECK(read_wav(f32).samples == w.samples);

  const auto i16 = temp_path("i16.wav");
  write_wav(i16, w, WavEncoding::kPcm16);
  const auto back = read_wav(i16);
  REQUIRE(back.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(std::abs(back.samples[i] - w.samples[i]) < 1e-4);

  // Hand-built stereo 16-bit file: L = +0.5, R = -0.25 -> mean 0.125.
  const auto stereo = temp_path("stereo.wav");
  {
    std::ofstream out(stereo, std::ios::binary);
    const auto put32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    const auto put16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
    out.write("RIFF", 4);
    put32(36 + 8);
    out.write("WAVEfmt ", 8);
    put32(16);
    put16(1);
    put16(2);
    put32(8000);
    put32(8000 * 4);
    put16(4);
    put16(16);
    out.write("data", 4);
    put32(8);
    for (int i = 0; i < 2; ++i) {
      put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(16384)));
      put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(-8192)));
    }
  }
  const auto s = read_wav(stereo);
  CHECK(s.sample_rate == 8000);
  REQUIRE(s.samples.size() == 2);
  CHECK(s.samples[0] == doctest::Approx(0.125));

  const auto junk = temp_path("junk.wav");
  std::ofstream(junk) << "not a wav";
  CHECK_THROWS_AS(read_wav(junk), FormatError);
}
