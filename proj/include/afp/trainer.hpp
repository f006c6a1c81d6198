#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "afp/augment.hpp"
#include "afp/encoder.hpp"

namespace afp {

struct TrainConfig {
  int batch_size = 64;  // N, must be even
  double temperature = 0.05;
  int epochs = 30;
  double lr_base = 5e-4;
  double lr_max = 5e-2;
  double ramp_epochs = 8.0;  // linear rise base -> max, then linear fall to base
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int segments_per_track = 8;  // anchor segments sampled per track per epoch
  std::uint64_t rng_seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Triangular cyclic schedule at a fractional epoch.
double learning_rate(const TrainConfig& cfg, double epoch);

/// a.b / (|a||b|). Throws InputError on a zero vector or size mismatch.
double cosine_sim(std::span<const double> a, std::span<const double> b);

/// Row-major N x d embeddings; rows 2k and 2k+1 form a positive pair.
struct PairBatch {
  int n = 0;
  int dim = 0;
  std::vector<double> embeddings;

  std::span<const double> row(int i) const {
    return std::span<const double>(embeddings).subspan(static_cast<std::size_t>(i) * dim, dim);
  }
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // dL/d embeddings, N x d
};

/// Mean over the N ordered anchor->positive pairs of
/// -log(exp(s_ij/tau) / sum_{k != i} exp(s_ik/tau)) with s the cosine similarity.
/// Rows must be unit-norm within 1e-4.
LossResult nt_xent(const PairBatch& batch, double temperature);

/// Adam state over the trainable tensors of an encoder.
class Adam {
 public:
  Adam(const EncoderParams<float>& params, double beta1, double beta2, double eps);
  void step(EncoderParams<float>& params, const EncoderParams<float>& grads, double lr);
  long long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainingBanks {
  std::span<const NoiseClip> noise;
  std::span<const RoomImpulseResponse> rirs;
};

struct EpochStats {
  int epoch = 0;
  int steps = 0;
  double mean_loss = 0.0;
  std::vector<double> losses;
  std::vector<double> learning_rates;
};

/// Owns parameters and optimizer state across epochs. Pair construction runs in
/// parallel with a generator per pair seeded from (seed, epoch, step, slot), so
/// results do not depend on the worker count.
class Trainer {
 public:
  Trainer(EncoderParams<float> params, TrainConfig train, AugmentConfig augment,
          FrontendConfig frontend);

  /// Throws InputError if the corpus yields fewer than N/2 gate-passing
  /// segments and NumericError on a non-finite loss.
  EpochStats train_epoch(std::span<const Waveform> corpus, const TrainingBanks& banks);

  const EncoderParams<float>& params() const { return params_; }
  int epochs_done() const { return epoch_; }

 private:
  EncoderParams<float> params_;
  TrainConfig train_;
  AugmentConfig augment_;
  FrontendConfig frontend_;
  LogMelExtractor extractor_;
  Adam adam_;
  int epoch_ = 0;
};

}  // namespace afp
