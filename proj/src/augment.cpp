#include "afp/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include "afp/error.hpp"
#include "fft.hpp"

namespace afp {

namespace {

constexpr double kLn1000 = 6.907755278982137;  // 60 dB amplitude decay
constexpr double kTailLevel = 0.1;             // reverberant tail relative to direct path
constexpr std::size_t kDirectConvolutionMaxTaps = 64;
constexpr int kMaxOffsetDraws = 32;

bool draw_stage(bool enabled, double p, Rng& rng) {
  if (!enabled) return false;
  if (p >= 1.0) return true;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

std::vector<std::filesystem::path> wav_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(max_offset_fraction >= 0.0 && max_offset_fraction < 1.0))
    throw ConfigError("augment.max_offset_fraction must be in [0, 1)");
  if (snr_min_db > snr_max_db) throw ConfigError("augment snr range must satisfy min <= max");
  if (time_masks < 0 || freq_masks < 0 || mask_width_fraction < 0.0)
    throw ConfigError("augment mask parameters must be non-negative");
  for (double p : {p_offset, p_reverb, p_noise, p_spec_augment})
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment stage probabilities must be in [0, 1]");
}

AudioSegment segment_at(const Waveform& track, double start, const FrontendConfig& fcfg) {
  if (track.sample_rate != fcfg.sample_rate)
    throw InputError("segment_at: track rate does not match frontend rate");
  const std::size_t len = fcfg.segment_samples();
  const long long first = std::llround(start * track.sample_rate);
  if (first < 0 || static_cast<std::size_t>(first) + len > track.samples.size())
    throw InputError("segment window out of track bounds");
  AudioSegment seg;
  seg.samples.assign(track.samples.begin() + first,
                     track.samples.begin() + first + static_cast<std::ptrdiff_t>(len));
  seg.start_time = static_cast<double>(first) / track.sample_rate;
  return seg;
}

OffsetSegment time_offset_segment(const Waveform& track, double start, const FrontendConfig& fcfg,
                                  const AugmentConfig& acfg, Rng& rng) {
  const double bound = acfg.max_offset_fraction * fcfg.hop_seconds();
  double delta = 0.0;
  if (bound > 0.0) delta = std::uniform_real_distribution<double>(-bound, bound)(rng);
  return {segment_at(track, start + delta, fcfg), delta};
}

MixResult mix_noise(std::span<const float> signal, std::span<const float> noise_window,
                    double snr_db) {
  if (noise_window.size() < signal.size())
    throw InputError("mix_noise: noise window shorter than segment");
  noise_window = noise_window.first(signal.size());
  const double signal_rms = rms(signal);
  const double noise_rms = rms(noise_window);
  if (noise_rms <= 0.0) throw InputError("mix_noise: zero-power noise window");
  if (signal_rms <= 0.0) throw InputError("mix_noise: zero-power segment (SNR undefined)");
  const double gain = signal_rms / (noise_rms * std::pow(10.0, snr_db / 20.0));
  MixResult out{std::vector<float>(signal.size()), gain};
  for (std::size_t i = 0; i < signal.size(); ++i)
    out.samples[i] = static_cast<float>(signal[i] + gain * noise_window[i]);
  return out;
}

std::span<const float> pick_noise_window(const NoiseClip& noise, std::size_t length, Rng& rng) {
  if (noise.samples.size() < length)
    throw InputError("noise clip shorter than the requested window");
  const std::size_t slack = noise.samples.size() - length;
  const std::size_t offset =
      slack == 0 ? 0 : std::uniform_int_distribution<std::size_t>(0, slack)(rng);
  return std::span<const float>(noise.samples).subspan(offset, length);
}

std::vector<double> apply_reverb(std::span<const double> signal, std::span<const double> rir) {
  if (rir.empty()) throw InputError("apply_reverb: empty RIR");
  double peak = 0.0;
  for (double v : rir) peak = std::max(peak, std::abs(v));
  if (peak <= 0.0) throw InputError("apply_reverb: all-zero RIR");
  std::vector<double> h(rir.begin(), rir.end());
  for (double& v : h) v /= peak;

  const std::size_t n = signal.size();
  if (h.size() > kDirectConvolutionMaxTaps) return detail::fft_convolve(signal, h, n);
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t kmax = std::min(h.size(), i + 1);
    double acc = 0.0;
    for (std::size_t k = 0; k < kmax; ++k) acc += h[k] * signal[i - k];
    y[i] = acc;
  }
  return y;
}

std::vector<float> apply_reverb(std::span<const float> signal, const RoomImpulseResponse& rir,
                                int signal_rate) {
  if (rir.sample_rate != signal_rate)
    throw InputError("apply_reverb: RIR sample rate does not match signal");
  std::vector<double> x(signal.begin(), signal.end());
  std::vector<double> h(rir.taps.begin(), rir.taps.end());
  const auto y = apply_reverb(x, h);
  return {y.begin(), y.end()};
}

LogMelSpec spec_augment(const LogMelSpec& spec, const AugmentConfig& cfg, Rng& rng) {
  LogMelSpec out = spec;
  if (spec.values.empty()) return out;
  const double mean =
      std::accumulate(spec.values.begin(), spec.values.end(), 0.0) / spec.values.size();
  const auto fill = static_cast<float>(mean);
  const auto width_for = [&](int axis) {
    return std::min(axis, static_cast<int>(std::lround(cfg.mask_width_fraction * axis)));
  };
  const int fw = width_for(spec.n_mels);
  const int tw = width_for(spec.n_frames);
  for (int m = 0; m < cfg.freq_masks; ++m) {
    const int start = std::uniform_int_distribution<int>(0, spec.n_mels - fw)(rng);
    for (int f = start; f < start + fw; ++f)
      for (int t = 0; t < spec.n_frames; ++t) out.at(f, t) = fill;
  }
  for (int m = 0; m < cfg.time_masks; ++m) {
    const int start = std::uniform_int_distribution<int>(0, spec.n_frames - tw)(rng);
    for (int f = 0; f < spec.n_mels; ++f)
      for (int t = start; t < start + tw; ++t) out.at(f, t) = fill;
  }
  return out;
}

Waveform distort(const Waveform& clip, const NoiseClip* noise, const RoomImpulseResponse* rir,
                 double snr_db, Rng& rng) {
  Waveform out = clip;
  if (rir != nullptr) out.samples = apply_reverb(out.samples, *rir, clip.sample_rate);
  if (noise != nullptr) {
    if (noise->sample_rate != clip.sample_rate)
      throw InputError("distort: noise clip sample rate does not match the clip");
    const auto window = pick_noise_window(*noise, out.samples.size(), rng);
    std::vector<float> n(window.begin(), window.end());
    if (rir != nullptr) n = apply_reverb(n, *rir, clip.sample_rate);
    out.samples = mix_noise(out.samples, n, snr_db).samples;
  }
  return out;
}

SpecPair make_pair(const Waveform& track, double start, std::span<const NoiseClip> noise_bank,
                   std::span<const RoomImpulseResponse> rir_bank, const LogMelExtractor& extractor,
                   const AugmentConfig& cfg, Rng& rng) {
  const FrontendConfig& fcfg = extractor.config();
  const AudioSegment clean = segment_at(track, start, fcfg);
  SpecPair pair;
  pair.anchor = extractor.compute(clean.samples);

  std::vector<float> x = clean.samples;
  if (draw_stage(cfg.enable_offset, cfg.p_offset, rng)) {
    for (int attempt = 0;; ++attempt) {
      try {
        auto shifted = time_offset_segment(track, start, fcfg, cfg, rng);
        x = std::move(shifted.segment.samples);
        pair.delta = shifted.delta;
        break;
      } catch (const InputError&) {
        if (attempt + 1 >= kMaxOffsetDraws) throw;
      }
    }
  }

  const RoomImpulseResponse* rir = nullptr;
  if (draw_stage(cfg.enable_reverb, cfg.p_reverb, rng)) {
    if (rir_bank.empty()) throw InputError("make_pair: reverb enabled but RIR bank is empty");
    rir = &rir_bank[std::uniform_int_distribution<std::size_t>(0, rir_bank.size() - 1)(rng)];
    x = apply_reverb(x, *rir, fcfg.sample_rate);
  }

  if (draw_stage(cfg.enable_noise, cfg.p_noise, rng)) {
    if (noise_bank.empty()) throw InputError("make_pair: noise enabled but noise bank is empty");
    const auto& clip =
        noise_bank[std::uniform_int_distribution<std::size_t>(0, noise_bank.size() - 1)(rng)];
    if (clip.sample_rate != fcfg.sample_rate)
      throw InputError("make_pair: noise clip sample rate does not match frontend rate");
    const double snr = std::uniform_real_distribution<double>(cfg.snr_min_db, cfg.snr_max_db)(rng);
    auto window = pick_noise_window(clip, x.size(), rng);
    std::vector<float> noise(window.begin(), window.end());
    if (rir != nullptr) noise = apply_reverb(noise, *rir, fcfg.sample_rate);
    x = mix_noise(x, noise, snr).samples;
  }

  pair.positive = extractor.compute(x);
  if (draw_stage(cfg.enable_spec_augment, cfg.p_spec_augment, rng))
    pair.positive = spec_augment(pair.positive, cfg, rng);
  return pair;
}

NoiseClip synth_noise(NoiseKind kind, double duration_s, int sample_rate, Rng& rng) {
  if (!(duration_s > 0.0)) throw InputError("synth_noise: duration must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  if (n == 0) throw InputError("synth_noise: duration shorter than one sample");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = gauss(rng);

  if (kind == NoiseKind::kPink) {
    const std::size_t m = detail::next_pow2(n);
    detail::RealFft fft(m);
    std::vector<double> padded(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) padded[i] = i < n ? x[i] : gauss(rng);
    std::vector<std::complex<double>> spectrum(fft.bins());
    fft.forward(padded, spectrum);
    spectrum[0] = 0.0;
    for (std::size_t k = 1; k < spectrum.size(); ++k)
      spectrum[k] /= std::sqrt(static_cast<double>(k));
    fft.inverse(spectrum, padded);
    std::copy(padded.begin(), padded.begin() + static_cast<std::ptrdiff_t>(n), x.begin());
  }

  double power = 0.0;
  for (double v : x) power += v * v;
  const double scale = 1.0 / std::sqrt(power / static_cast<double>(n));
  NoiseClip clip{std::vector<float>(n), sample_rate};
  for (std::size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<float>(x[i] * scale);
  return clip;
}

RoomImpulseResponse synth_rir(double t60, int sample_rate, Rng& rng) {
  if (!(t60 > 0.0)) throw InputError("synth_rir: t60 must be positive");
  const double decay_samples = t60 * sample_rate;
  const auto n = static_cast<std::size_t>(std::ceil(decay_samples)) + 1;
  std::normal_distribution<double> gauss(0.0, 1.0);
  RoomImpulseResponse rir{std::vector<float>(std::max<std::size_t>(n, 1)), sample_rate, t60};
  rir.taps[0] = 1.0f;
  double peak = 1.0;
  for (std::size_t i = 1; i < rir.taps.size(); ++i) {
    const double env = std::exp(-kLn1000 * static_cast<double>(i) / decay_samples);
    const double v = kTailLevel * gauss(rng) * env;
    rir.taps[i] = static_cast<float>(v);
    peak = std::max(peak, std::abs(v));
  }
  if (peak > 1.0)
    for (float& v : rir.taps) v = static_cast<float>(v / peak);
  return rir;
}

std::vector<NoiseClip> load_noise_bank(const std::filesystem::path& dir, int sample_rate) {
  std::vector<NoiseClip> bank;
  for (const auto& file : wav_files(dir)) {
    auto w = resample(read_wav(file), sample_rate);
    bank.push_back({std::move(w.samples), sample_rate});
  }
  return bank;
}

std::vector<RoomImpulseResponse> load_rir_bank(const std::filesystem::path& dir,
                                               int sample_rate) {
  std::vector<RoomImpulseResponse> bank;
  for (const auto& file : wav_files(dir)) {
    auto w = resample(read_wav(file), sample_rate);
    bank.push_back({std::move(w.samples), sample_rate, 0.0});
  }
  return bank;
}

}  // namespace afp
