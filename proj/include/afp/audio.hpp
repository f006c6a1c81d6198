#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace afp {

using TrackId = std::uint32_t;

/// Mono PCM signal. Nominal amplitude range is [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 0;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Fixed-length slice of a track.
struct AudioSegment {
  std::vector<float> samples;
  TrackId source_track = 0;
  double start_time = 0.0;  // seconds
};

double mean_power(std::span<const float> x);
double rms(std::span<const float> x);

/// Reads a PCM WAV file (16-bit integer or 32-bit float, any channel count).
/// Multichannel input is downmixed by channel mean.
Waveform read_wav(const std::filesystem::path& path);

enum class WavEncoding { kPcm16, kFloat32 };

/// Writes a mono WAV file. kPcm16 clips to [-1, 1].
void write_wav(const std::filesystem::path& path, const Waveform& w,
               WavEncoding encoding = WavEncoding::kFloat32);

}  // namespace afp
