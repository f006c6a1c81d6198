#include "afp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "afp/error.hpp"
#include "afp/parallel.hpp"

namespace afp {

void TrainConfig::validate() const {
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("train.batch_size must be even and >= 2");
  if (!(temperature > 0.0)) throw ConfigError("train.temperature must be > 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(lr_base > 0.0) || !(lr_base < lr_max)) throw ConfigError("train: need 0 < lr_base < lr_max");
  if (!(ramp_epochs > 0.0)) throw ConfigError("train.ramp_epochs must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
      !(adam_eps > 0.0))
    throw ConfigError("train: Adam moments must lie in [0, 1) and eps > 0");
  if (segments_per_track < 1) throw ConfigError("train.segments_per_track must be >= 1");
}

double learning_rate(const TrainConfig& cfg, double epoch) {
  const double span = cfg.lr_max - cfg.lr_base;
  if (epoch <= cfg.ramp_epochs) return cfg.lr_base + span * std::max(0.0, epoch) / cfg.ramp_epochs;
  const double fall = cfg.epochs - cfg.ramp_epochs;
  if (fall <= 0.0) return cfg.lr_max;
  return cfg.lr_max - span * std::min(1.0, (epoch - cfg.ramp_epochs) / fall);
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("cosine_sim: size mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw InputError("cosine_sim: zero vector");
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

LossResult nt_xent(const PairBatch& batch, double temperature) {
  const int n = batch.n;
  const auto d = static_cast<std::size_t>(batch.dim);
  if (!(temperature > 0.0)) throw ConfigError("nt_xent: temperature must be > 0");
  if (n < 2 || n % 2 != 0) throw InputError("nt_xent: batch size must be even and >= 2");
  if (batch.embeddings.size() != static_cast<std::size_t>(n) * d) throw InputError("nt_xent: shape mismatch");

  std::vector<double> norms(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto r = batch.row(i);
    norms[i] = std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0));
    if (std::abs(norms[i] - 1.0) > 1e-4) throw InputError("nt_xent: rows must be unit-norm");
  }
  // s[i][k] cosine similarity; logits s/tau.
  std::vector<double> s(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int k = i; k < n; ++k) {
      const auto a = batch.row(i), b = batch.row(k);
      const double v = std::inner_product(a.begin(), a.end(), b.begin(), 0.0) / (norms[i] * norms[k]);
      s[i * n + k] = s[k * n + i] = v;
    }

  LossResult out;
  out.grad.assign(batch.embeddings.size(), 0.0);
  std::vector<double> ds(static_cast<std::size_t>(n) * n, 0.0);  // dL/ds
  std::vector<double> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int pos = i ^ 1;
    double m = -INFINITY;
    for (int k = 0; k < n; ++k)
      if (k != i) m = std::max(m, s[i * n + k] / temperature);
    double z = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) z += (p[k] = std::exp(s[i * n + k] / temperature - m));
    out.loss += m + std::log(z) - s[i * n + pos] / temperature;
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      const double g = (p[k] / z - (k == pos ? 1.0 : 0.0)) / (temperature * n);
      ds[i * n + k] += g;
      ds[k * n + i] += g;
    }
  }
  out.loss /= n;
  if (!std::isfinite(out.loss)) throw NumericError("nt_xent: non-finite loss");

  // ds holds the total derivative of the symmetric s_ik;
  // d s_ik / d e_i = e_k/(|e_i||e_k|) - s_ik e_i/|e_i|^2.
  for (int i = 0; i < n; ++i) {
    const auto ei = batch.row(i);
    double* gi = out.grad.data() + static_cast<std::size_t>(i) * d;
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      const double g = ds[i * n + k];
      if (g == 0.0) continue;
      const auto ek = batch.row(k);
      const double sik = s[i * n + k];
      for (std::size_t j = 0; j < d; ++j)
        gi[j] += g * (ek[j] / (norms[i] * norms[k]) - sik * ei[j] / (norms[i] * norms[i]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Adam::Adam(const EncoderParams<float>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for_each_tensor(params, [&](const std::string&, const std::vector<float>& v, TensorRole role) {
    if (role != TensorRole::kTrainable) return;
    m_.emplace_back(v.size(), 0.0);
    v_.emplace_back(v.size(), 0.0);
  });
}

void Adam::step(EncoderParams<float>& params, const EncoderParams<float>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::vector<const std::vector<float>*> g;
  for_each_tensor(grads, [&](const std::string&, const std::vector<float>& v, TensorRole role) {
    if (role == TensorRole::kTrainable) g.push_back(&v);
  });
  std::size_t t = 0;
  for_each_tensor(params, [&](const std::string&, std::vector<float>& w, TensorRole role) {
    if (role != TensorRole::kTrainable) return;
    auto& m = m_[t];
    auto& v = v_[t];
    const auto& gt = *g[t++];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gt[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gt[i] * gt[i];
      w[i] -= static_cast<float>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
    }
  });
}

// ---------------------------------------------------------------------------

Trainer::Trainer(EncoderParams<float> params, TrainConfig train, AugmentConfig augment,
                 FrontendConfig frontend)
    : params_(std::move(params)),
      train_(train),
      augment_(augment),
      frontend_(frontend),
      extractor_(frontend),
      adam_(params_, train.adam_beta1, train.adam_beta2, train.adam_eps) {
  train_.validate();
  augment_.validate();
  if (params_.arch.n_mels != frontend_.n_mels || params_.arch.n_frames != frontend_.n_frames)
    throw ConfigError("trainer: encoder input does not match the spectrogram shape");
}

namespace {

enum class Stream : std::uint32_t { kAnchors = 1, kPairs = 2 };

Rng seeded(Stream stream, std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(c)};
  return Rng(seq);
}

struct Anchor {
  std::size_t track;
  double start;
};

}  // namespace

EpochStats Trainer::train_epoch(std::span<const Waveform> corpus, const TrainingBanks& banks) {
  const auto seg_len = static_cast<std::size_t>(frontend_.segment_samples());
  const int epoch = epoch_;
  Rng rng = seeded(Stream::kAnchors, train_.rng_seed, static_cast<std::uint64_t>(epoch));

  // Energy-gated anchor starts, sample-aligned and uniform over each track.
  std::vector<Anchor> anchors;
  for (std::size_t t = 0; t < corpus.size(); ++t) {
    const Waveform& w = corpus[t];
    if (w.sample_rate != frontend_.sample_rate)
      throw InputError("trainer: corpus track sample rate differs from the frontend rate");
    if (w.samples.size() < seg_len) continue;
    const double ref = mean_power(w.samples);
    std::uniform_int_distribution<std::size_t> pick(0, w.samples.size() - seg_len);
    int kept = 0;
    for (int tries = 0; kept < train_.segments_per_track && tries < 8 * train_.segments_per_track; ++tries) {
      const std::size_t first = pick(rng);
      if (!energy_gate(std::span<const float>(w.samples).subspan(first, seg_len), ref,
                       frontend_.energy_threshold_db))
        continue;
      anchors.push_back({t, static_cast<double>(first) / w.sample_rate});
      ++kept;
    }
  }
  std::shuffle(anchors.begin(), anchors.end(), rng);
  const std::size_t pairs = static_cast<std::size_t>(train_.batch_size / 2);
  const std::size_t steps = anchors.size() / pairs;
  if (steps == 0) throw InputError("trainer: corpus yields fewer than N/2 gate-passing segments");

  EpochStats stats;
  stats.epoch = epoch;
  stats.steps = static_cast<int>(steps);
  const std::size_t in_size = static_cast<std::size_t>(frontend_.n_mels) * frontend_.n_frames;
  const auto d = static_cast<std::size_t>(params_.arch.embedding_dim);
  std::vector<float> inputs(2 * pairs * in_size);
  for (std::size_t step = 0; step < steps; ++step) {
    parallel_for(pairs, [&](std::size_t j) {
      const Anchor& a = anchors[step * pairs + j];
      Rng pair_rng = seeded(Stream::kPairs, train_.rng_seed, static_cast<std::uint64_t>(epoch), step, j);
      const SpecPair sp =
          make_pair(corpus[a.track], a.start, banks.noise, banks.rirs, extractor_, augment_, pair_rng);
      std::copy(sp.anchor.values.begin(), sp.anchor.values.end(), inputs.begin() + (2 * j) * in_size);
      std::copy(sp.positive.values.begin(), sp.positive.values.end(),
                inputs.begin() + (2 * j + 1) * in_size);
    });

    const int n = static_cast<int>(2 * pairs);
    const auto tape = encoder_forward<float>(inputs, n, params_, BnMode::kTraining);
    PairBatch pb{n, static_cast<int>(d), std::vector<double>(tape.embeddings().begin(), tape.embeddings().end())};
    const LossResult loss = nt_xent(pb, train_.temperature);
    std::vector<float> upstream(loss.grad.begin(), loss.grad.end());
    EncoderParams<float> grads = zeros_like(params_);
    encoder_backward<float>(tape, params_, upstream, grads);

    const double lr = learning_rate(train_, epoch + static_cast<double>(step) / static_cast<double>(steps));
    adam_.step(params_, grads, lr);
    update_running_stats(params_, tape);
    stats.losses.push_back(loss.loss);
    stats.learning_rates.push_back(lr);
  }
  stats.mean_loss = std::accumulate(stats.losses.begin(), stats.losses.end(), 0.0) / static_cast<double>(steps);
  ++epoch_;
  return stats;
}

}  // namespace afp
