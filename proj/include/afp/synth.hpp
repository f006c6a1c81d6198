#pragma once

#include "afp/audio.hpp"
#include "afp/augment.hpp"

namespace afp {

/// Synthetic music-like track: 2-3 voices of harmonic notes (0.1-0.5 s) whose
/// amplitude is modulated by low-passed noise, over a faint pink-noise bed.
/// Peak-normalized to 0.9.
Waveform synth_track(double duration_s, int sample_rate, Rng& rng);

}  // namespace afp
