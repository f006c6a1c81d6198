#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "afp/audio.hpp"
#include "afp/frontend.hpp"

namespace afp {

using Rng = std::mt19937_64;

/// Stochastic distortion chain used to build the positive sample of a
/// contrastive pair. Stage order is fixed: offset, reverb, noise, SpecAugment.
struct AugmentConfig {
  double max_offset_fraction = 0.4;  // of the hop H
  double snr_min_db = 0.0;
  double snr_max_db = 25.0;
  int time_masks = 2;
  int freq_masks = 2;
  double mask_width_fraction = 0.1;  // 0.001 selects the literal 0.1% width
  bool enable_offset = true;
  bool enable_reverb = true;
  bool enable_noise = true;
  bool enable_spec_augment = true;
  double p_offset = 1.0;
  double p_reverb = 1.0;
  double p_noise = 1.0;
  double p_spec_augment = 1.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
  bool operator==(const AugmentConfig&) const = default;
};

struct NoiseClip {
  std::vector<float> samples;
  int sample_rate = 0;
};

struct RoomImpulseResponse {
  std::vector<float> taps;
  int sample_rate = 0;
  double t60 = 0.0;  // seconds, metadata only
};

/// Copies the L-length window starting at `start` seconds. Throws InputError
/// when the window leaves the track.
AudioSegment segment_at(const Waveform& track, double start, const FrontendConfig& fcfg);

struct OffsetSegment {
  AudioSegment segment;
  double delta = 0.0;  // applied shift in seconds
};

/// Draws delta ~ U(-f*H, +f*H) and returns the segment at start + delta.
/// Throws InputError if the shifted window is out of bounds.
OffsetSegment time_offset_segment(const Waveform& track, double start, const FrontendConfig& fcfg,
                                  const AugmentConfig& acfg, Rng& rng);

struct MixResult {
  std::vector<float> samples;
  double gain = 0.0;  // applied to the noise window
};

/// signal + g * noise with g = rms(signal) / (rms(noise) * 10^(snr/20)).
MixResult mix_noise(std::span<const float> signal, std::span<const float> noise_window,
                    double snr_db);

/// Uniformly placed window of `length` samples inside the clip.
std::span<const float> pick_noise_window(const NoiseClip& noise, std::size_t length, Rng& rng);

/// Convolution with the peak-normalized RIR, truncated to the input length.
std::vector<double> apply_reverb(std::span<const double> signal, std::span<const double> rir);
std::vector<float> apply_reverb(std::span<const float> signal, const RoomImpulseResponse& rir,
                                int signal_rate);

/// Two time masks and two frequency masks (counts from cfg) filled with the
/// spectrogram mean.
LogMelSpec spec_augment(const LogMelSpec& spec, const AugmentConfig& cfg, Rng& rng);

struct SpecPair {
  LogMelSpec anchor;
  LogMelSpec positive;
  double delta = 0.0;
};

SpecPair make_pair(const Waveform& track, double start, std::span<const NoiseClip> noise_bank,
                   std::span<const RoomImpulseResponse> rir_bank, const LogMelExtractor& extractor,
                   const AugmentConfig& cfg, Rng& rng);

/// Test-query degradation: reverberates the clip and, if given, a noise window
/// with the same RIR, then mixes at snr_db. Either stage may be null.
Waveform distort(const Waveform& clip, const NoiseClip* noise, const RoomImpulseResponse* rir,
                 double snr_db, Rng& rng);

enum class NoiseKind { kWhite, kPink };

/// Unit-RMS Gaussian noise; pink noise has a -3 dB/octave power slope.
NoiseClip synth_noise(NoiseKind kind, double duration_s, int sample_rate, Rng& rng);

/// Exponentially decaying Gaussian tail behind a unit direct-path tap.
RoomImpulseResponse synth_rir(double t60, int sample_rate, Rng& rng);

/// Loads every *.wav in `dir` (sorted by filename), resampled to sample_rate.
std::vector<NoiseClip> load_noise_bank(const std::filesystem::path& dir, int sample_rate);
std::vector<RoomImpulseResponse> load_rir_bank(const std::filesystem::path& dir, int sample_rate);

}  // namespace afp
