#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "afp/audio.hpp"

namespace afp {

/// Framing and spectrogram parameters. Defaults give a 64x96 log-mel
/// spectrogram for a 960 ms segment at 16 kHz.
struct FrontendConfig {
  int sample_rate = 16000;          // Hz
  double segment_ms = 960.0;        // segment length L
  double hop_ms = 100.0;            // subfingerprint hop H
  double energy_threshold_db = 0.0; // gate t, relative to track mean power
  int n_mels = 64;
  int n_frames = 96;
  int fft_size = 1024;
  int frame_hop = 160;
  double mel_fmin = 0.0;
  double mel_fmax = 8000.0;
  double log_floor = 1e-10;
  bool gate_on_ingest = false;

  std::size_t segment_samples() const;
  double hop_seconds() const { return hop_ms / 1000.0; }
  double segment_seconds() const { return segment_ms / 1000.0; }
  /// Sample index where segment k begins: round(k * H * Fs).
  std::size_t segment_start(std::size_t k) const;
  /// Throws ConfigError when the fields are inconsistent.
  void validate() const;

  bool operator==(const FrontendConfig&) const = default;
};

/// Band-limited rational resampler (windowed sinc, 64 taps per output sample).
class Resampler {
 public:
  Resampler(int from_rate, int to_rate);
  std::vector<float> process(std::span<const float> input) const;
  int from_rate() const { return from_; }
  int to_rate() const { return to_; }

 private:
  double tap_weight(std::size_t phase, int k) const;

  int from_ = 0;
  int to_ = 0;
  std::size_t up_ = 1;    // interpolation factor
  std::size_t down_ = 1;  // decimation factor
  double cutoff_ = 1.0;   // relative to input Nyquist
  std::vector<double> table_;  // up_ x kTaps, empty when computed on the fly
};

Waveform resample(const Waveform& w, int target_rate);

/// Number of full segments of length L at hop H that fit in num_samples.
std::size_t segment_count(std::size_t num_samples, const FrontendConfig& cfg);

std::vector<AudioSegment> segment_stream(const Waveform& w, const FrontendConfig& cfg,
                                         TrackId track = 0);

/// True iff 10*log10(mean power / reference_power) >= threshold_db.
bool energy_gate(std::span<const float> segment, double reference_power, double threshold_db);

/// F x T matrix of natural-log mel energies, row-major (band-major).
struct LogMelSpec {
  int n_mels = 0;
  int n_frames = 0;
  std::vector<float> values;

  float at(int band, int frame) const {
    return values[static_cast<std::size_t>(band) * n_frames + frame];
  }
  float& at(int band, int frame) {
    return values[static_cast<std::size_t>(band) * n_frames + frame];
  }
  bool operator==(const LogMelSpec&) const = default;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular mel filters on the FFT bin grid; n_mels x (fft_size/2 + 1).
std::vector<double> mel_filterbank(const FrontendConfig& cfg);

/// STFT -> power -> mel -> log. Thread-safe after construction.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(const FrontendConfig& cfg);
  ~LogMelExtractor();
  LogMelExtractor(const LogMelExtractor&) = delete;
  LogMelExtractor& operator=(const LogMelExtractor&) = delete;

  LogMelSpec compute(std::span<const float> segment) const;
  /// Linear mel energies before the log floor (used by tests).
  std::vector<double> mel_energies(std::span<const float> segment) const;
  const FrontendConfig& config() const { return cfg_; }

 private:
  struct Plan;
  FrontendConfig cfg_;
  std::vector<double> window_;
  std::vector<double> filters_;
  std::unique_ptr<Plan> plan_;
};

LogMelSpec log_mel(const AudioSegment& seg, const FrontendConfig& cfg);

/// Computes log-mel spectrograms for many segments (OpenMP over segments).
std::vector<LogMelSpec> log_mel_batch(const LogMelExtractor& extractor,
                                      const std::vector<AudioSegment>& segments);

}  // namespace afp
