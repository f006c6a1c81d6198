#include "afp/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "afp/error.hpp"
#include "afp/parallel.hpp"
#include "fft.hpp"

namespace afp {

std::size_t FrontendConfig::segment_samples() const {
  return static_cast<std::size_t>(std::llround(segment_ms * sample_rate / 1000.0));
}

std::size_t FrontendConfig::segment_start(std::size_t k) const {
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(k) * hop_ms * sample_rate / 1000.0));
}

void FrontendConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("frontend.sample_rate must be positive");
  if (segment_ms <= 0 || hop_ms <= 0) throw ConfigError("frontend segment/hop must be positive");
  if (n_mels <= 0 || n_frames <= 0) throw ConfigError("frontend n_mels/n_frames must be positive");
  if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0)
    throw ConfigError("frontend.fft_size must be a power of two");
  if (frame_hop <= 0) throw ConfigError("frontend.frame_hop must be positive");
  if (!(mel_fmin >= 0 && mel_fmin < mel_fmax && mel_fmax <= sample_rate / 2.0))
    throw ConfigError("frontend mel range must satisfy 0 <= fmin < fmax <= Nyquist");
  if (!(log_floor > 0)) throw ConfigError("frontend.log_floor must be positive");
  const std::size_t n = segment_samples();
  // Centered framing yields 1 + n / frame_hop frames; the first n_frames are used.
  if (1 + n / static_cast<std::size_t>(frame_hop) < static_cast<std::size_t>(n_frames))
    throw ConfigError("frontend: segment too short for n_frames frames");
  if (n <= static_cast<std::size_t>(fft_size / 2))
    throw ConfigError("frontend: segment must be longer than fft_size/2 for reflect padding");
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

constexpr int kTaps = 64;
constexpr int kHalfTaps = kTaps / 2;
constexpr double kKaiserBeta = 6.0;
constexpr double kCutoffMargin = 0.85;
constexpr std::size_t kMaxTablePhases = 8192;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double kaiser(double x) {  // x in [-1, 1]
  const double r = 1.0 - x * x;
  if (r <= 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(r)) / std::cyl_bessel_i(0.0, kKaiserBeta);
}

}  // namespace

Resampler::Resampler(int from_rate, int to_rate) : from_(from_rate), to_(to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw ConfigError("sample rates must be positive");
  const int g = std::gcd(from_rate, to_rate);
  up_ = static_cast<std::size_t>(to_rate / g);
  down_ = static_cast<std::size_t>(from_rate / g);
  cutoff_ = kCutoffMargin * std::min(1.0, static_cast<double>(up_) / static_cast<double>(down_));
  if (up_ <= kMaxTablePhases) {
    table_.resize(up_ * kTaps);
    for (std::size_t p = 0; p < up_; ++p)
      for (int k = 0; k < kTaps; ++k) table_[p * kTaps + k] = tap_weight(p, k);
  }
}

// Weight of input sample (base - kHalfTaps + 1 + k) for an output whose input-rate
// position is base + phase/up. Taps of each phase are normalized to unit DC gain.
double Resampler::tap_weight(std::size_t phase, int k) const {
  const double frac = static_cast<double>(phase) / static_cast<double>(up_);
  double sum = 0.0, target = 0.0;
  for (int j = 0; j < kTaps; ++j) {
    const double d = frac + (kHalfTaps - 1) - j;
    const double w = cutoff_ * sinc(cutoff_ * d) * kaiser(d / kHalfTaps);
    sum += w;
    if (j == k) target = w;
  }
  return target / sum;
}

std::vector<float> Resampler::process(std::span<const float> input) const {
  if (input.empty()) throw InputError("resample: empty input signal");
  if (up_ == down_) return {input.begin(), input.end()};
  const std::size_t n_in = input.size();
  const std::size_t n_out = (n_in * up_ + down_ - 1) / down_;
  std::vector<float> out(n_out);
  std::vector<double> weights(kTaps);
  for (std::size_t n = 0; n < n_out; ++n) {
    const std::size_t t = n * down_;
    const std::size_t base = t / up_;
    const std::size_t phase = t % up_;
    const double* w = nullptr;
    if (!table_.empty()) {
      w = &table_[phase * kTaps];
    } else {
      for (int k = 0; k < kTaps; ++k) weights[k] = tap_weight(phase, k);
      w = weights.data();
    }
    double acc = 0.0;
    for (int k = 0; k < kTaps; ++k) {
      const auto idx = static_cast<std::ptrdiff_t>(base) - (kHalfTaps - 1) + k;
      if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(n_in)) continue;
      acc += w[k] * input[static_cast<std::size_t>(idx)];
    }
    out[n] = static_cast<float>(acc);
  }
  return out;
}

Waveform resample(const Waveform& w, int target_rate) {
  if (w.samples.empty()) throw InputError("resample: empty input signal");
  if (w.sample_rate == target_rate) return w;
  Resampler r(w.sample_rate, target_rate);
  return {r.process(w.samples), target_rate};
}

// ---------------------------------------------------------------------------
// Segmentation and gating

std::size_t segment_count(std::size_t num_samples, const FrontendConfig& cfg) {
  const std::size_t len = cfg.segment_samples();
  if (num_samples < len) return 0;
  // Closed form in exact arithmetic, then corrected for rounding of the starts.
  const double hop = cfg.hop_ms * cfg.sample_rate / 1000.0;
  auto k = static_cast<std::size_t>(std::floor(static_cast<double>(num_samples - len) / hop)) + 1;
  while (k > 0 && cfg.segment_start(k - 1) + len > num_samples) --k;
  while (cfg.segment_start(k) + len <= num_samples) ++k;
  return k;
}

std::vector<AudioSegment> segment_stream(const Waveform& w, const FrontendConfig& cfg,
                                         TrackId track) {
  if (w.sample_rate != cfg.sample_rate)
    throw InputError("segment_stream: waveform rate does not match frontend rate");
  const std::size_t len = cfg.segment_samples();
  if (w.samples.size() < len)
    throw InputError("segment_stream: track shorter than one segment");
  const std::size_t count = segment_count(w.samples.size(), cfg);
  std::vector<AudioSegment> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t start = cfg.segment_start(k);
    AudioSegment seg;
    seg.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(start),
                       w.samples.begin() + static_cast<std::ptrdiff_t>(start + len));
    seg.source_track = track;
    seg.start_time = static_cast<double>(start) / cfg.sample_rate;
    out.push_back(std::move(seg));
  }
  return out;
}

bool energy_gate(std::span<const float> segment, double reference_power, double threshold_db) {
  const double p = mean_power(segment);
  if (p <= 0.0) return false;
  return 10.0 * std::log10(p / reference_power) >= threshold_db;
}

// ---------------------------------------------------------------------------
// Log-mel

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(const FrontendConfig& cfg) {
  const int bins = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.mel_fmin);
  const double hi = hz_to_mel(cfg.mel_fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (cfg.n_mels + 1));
  std::vector<double> fb(static_cast<std::size_t>(cfg.n_mels) * bins, 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb[static_cast<std::size_t>(m) * bins + k] = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

struct LogMelExtractor::Plan {
  explicit Plan(std::size_t n) : fft(n) {}
  detail::RealFft fft;
};

LogMelExtractor::LogMelExtractor(const FrontendConfig& cfg)
    : cfg_(cfg), filters_(mel_filterbank(cfg)) {
  cfg_.validate();
  window_.resize(static_cast<std::size_t>(cfg.fft_size));
  for (int j = 0; j < cfg.fft_size; ++j)
    window_[j] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * j / cfg.fft_size);
  plan_ = std::make_unique<Plan>(static_cast<std::size_t>(cfg.fft_size));
}

LogMelExtractor::~LogMelExtractor() = default;

std::vector<double> LogMelExtractor::mel_energies(std::span<const float> segment) const {
  const std::size_t n = segment.size();
  if (n != cfg_.segment_samples())
    throw InputError("log_mel: segment length does not match frontend config");
  const int fft = cfg_.fft_size;
  const int bins = fft / 2 + 1;
  const auto reflect = [n](std::ptrdiff_t i) {
    const auto last = static_cast<std::ptrdiff_t>(n) - 1;
    if (i < 0) i = -i;
    if (i > last) i = 2 * last - i;
    return static_cast<std::size_t>(i);
  };
  std::vector<double> frame(static_cast<std::size_t>(fft));
  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(bins));
  std::vector<double> power(static_cast<std::size_t>(bins));
  std::vector<double> mel(static_cast<std::size_t>(cfg_.n_mels) * cfg_.n_frames, 0.0);
  for (int t = 0; t < cfg_.n_frames; ++t) {
    const std::ptrdiff_t begin = static_cast<std::ptrdiff_t>(t) * cfg_.frame_hop - fft / 2;
    for (int j = 0; j < fft; ++j) frame[j] = window_[j] * segment[reflect(begin + j)];
    plan_->fft.forward(frame, spectrum);
    for (int k = 0; k < bins; ++k) power[k] = std::norm(spectrum[k]);
    for (int m = 0; m < cfg_.n_mels; ++m) {
      const double* w = &filters_[static_cast<std::size_t>(m) * bins];
      double acc = 0.0;
      for (int k = 0; k < bins; ++k) acc += w[k] * power[k];
      mel[static_cast<std::size_t>(m) * cfg_.n_frames + t] = acc;
    }
  }
  return mel;
}

LogMelSpec LogMelExtractor::compute(std::span<const float> segment) const {
  const auto mel = mel_energies(segment);
  LogMelSpec spec{cfg_.n_mels, cfg_.n_frames, std::vector<float>(mel.size())};
  for (std::size_t i = 0; i < mel.size(); ++i)
    spec.values[i] = static_cast<float>(std::log(std::max(mel[i], cfg_.log_floor)));
  return spec;
}

LogMelSpec log_mel(const AudioSegment& seg, const FrontendConfig& cfg) {
  return LogMelExtractor(cfg).compute(seg.samples);
}

std::vector<LogMelSpec> log_mel_batch(const LogMelExtractor& extractor,
                                      const std::vector<AudioSegment>& segments) {
  std::vector<LogMelSpec> out(segments.size());
  parallel_for(segments.size(),
               [&](std::size_t i) { out[i] = extractor.compute(segments[i].samples); });
  return out;
}

}  // namespace afp
