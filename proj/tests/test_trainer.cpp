#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "afp/checkpoint.hpp"
#include "afp/error.hpp"
#include "afp/parallel.hpp"
#include "afp/synth.hpp"
#include "afp/trainer.hpp"
#include "doctest.h"

using namespace afp;

namespace {

PairBatch random_batch(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  PairBatch b{n, d, std::vector<double>(static_cast<std::size_t>(n) * d)};
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int j = 0; j < d; ++j) sq += std::pow(b.embeddings[i * d + j] = g(rng), 2);
    for (int j = 0; j < d; ++j) b.embeddings[i * d + j] /= std::sqrt(sq);
  }
  return b;
}

// Direct transcription of the per-pair term, summed over both orderings and averaged.
double oracle_loss(const PairBatch& b, double tau) {
  const auto sim = [&](int i, int k) {
    double ab = 0, aa = 0, bb = 0;
    for (int j = 0; j < b.dim; ++j) {
      ab += b.embeddings[i * b.dim + j] * b.embeddings[k * b.dim + j];
      aa += b.embeddings[i * b.dim + j] * b.embeddings[i * b.dim + j];
      bb += b.embeddings[k * b.dim + j] * b.embeddings[k * b.dim + j];
    }
    return ab / std::sqrt(aa * bb);
  };
  double total = 0.0;
  for (int i = 0; i < b.n; ++i) {
    const int j = i % 2 == 0 ? i + 1 : i - 1;
    double denom = 0.0;
    for (int k = 0; k < b.n; ++k)
      if (k != i) denom += std::exp(sim(i, k) / tau);
    total += -std::log(std::exp(sim(i, j) / tau) / denom);
  }
  return total / b.n;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("afp_trainer_" + name);
}

}  // namespace

TEST_CASE("cosine_sim examples and zero-vector error") {
  const std::vector<double> a{1.0, 0.0}, b{1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)}, c{0.0, 3.0};
  CHECK(cosine_sim(a, a) == doctest::Approx(1.0));
  CHECK(cosine_sim(a, c) == 0.0);
  CHECK(cosine_sim(a, b) == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-15));
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(cosine_sim(a, zero), InputError);
}

TEST_CASE("nt_xent: a single pair has zero loss exactly") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) CHECK(nt_xent(random_batch(2, 16, rng), 0.05).loss == 0.0);
}

TEST_CASE("nt_xent: four identical embeddings give ln 3") {
  PairBatch b{4, 3, {}};
  for (int i = 0; i < 4; ++i) b.embeddings.insert(b.embeddings.end(), {0.6, 0.0, 0.8});
  CHECK(std::abs(nt_xent(b, 0.05).loss - std::log(3.0)) < 1e-9);
}

TEST_CASE("nt_xent: random N=6 batches match the brute-force oracle") {
  std::mt19937_64 rng(2);
  for (double tau : {0.05, 0.1, 0.5, 1.0}) {
    const auto b = random_batch(6, 8, rng);
    CHECK(std::abs(nt_xent(b, tau).loss - oracle_loss(b, tau)) < 1e-9);
  }
}

TEST_CASE("nt_xent: gradient matches central finite differences") {
  std::mt19937_64 rng(3);
  for (double tau : {0.05, 0.5}) {
    auto b = random_batch(6, 5, rng);
    const auto grad = nt_xent(b, tau).grad;
    double diff2 = 0.0, norm2 = 0.0;
    for (std::size_t i = 0; i < b.embeddings.size(); ++i) {
      const double keep = b.embeddings[i];
      const double h = 1e-7;
      b.embeddings[i] = keep + h;
      const double up = oracle_loss(b, tau);
      b.embeddings[i] = keep - h;
      const double down = oracle_loss(b, tau);
      b.embeddings[i] = keep;
      const double fd = (up - down) / (2 * h);
      diff2 += (fd - grad[i]) * (fd - grad[i]);
      norm2 += fd * fd;
    }
    CHECK(std::sqrt(diff2 / norm2) < 1e-5);
  }
}

TEST_CASE("nt_xent: non-negative, rotation invariant and symmetric in pair roles") {
  std::mt19937_64 rng(4);
  const int n = 8, d = 6;
  for (int trial = 0; trial < 20; ++trial) {
    const auto b = random_batch(n, d, rng);
    const double loss = nt_xent(b, 0.1).loss;
    CHECK(loss >= 0.0);

    // Random orthogonal matrix by Gram-Schmidt.
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> q(d * d);
    for (double& v : q) v = g(rng);
    for (int r = 0; r < d; ++r) {
      for (int p = 0; p < r; ++p) {
        double dot = 0;
        for (int j = 0; j < d; ++j) dot += q[r * d + j] * q[p * d + j];
        for (int j = 0; j < d; ++j) q[r * d + j] -= dot * q[p * d + j];
      }
      double nrm = 0;
      for (int j = 0; j < d; ++j) nrm += q[r * d + j] * q[r * d + j];
      for (int j = 0; j < d; ++j) q[r * d + j] /= std::sqrt(nrm);
    }
    PairBatch rotated = b;
    for (int i = 0; i < n; ++i)
      for (int r = 0; r < d; ++r) {
        double acc = 0;
        for (int j = 0; j < d; ++j) acc += q[r * d + j] * b.embeddings[i * d + j];
        rotated.embeddings[i * d + r] = acc;
      }
    CHECK(nt_xent(rotated, 0.1).loss == doctest::Approx(loss).epsilon(1e-12));

    PairBatch swapped = b;
    for (int i = 0; i < n; i += 2)
      for (int j = 0; j < d; ++j) std::swap(swapped.embeddings[i * d + j], swapped.embeddings[(i + 1) * d + j]);
    CHECK(nt_xent(swapped, 0.1).loss == doctest::Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("nt_xent: small gradient steps on frozen embeddings decrease the loss") {
  std::mt19937_64 rng(5);
  auto b = random_batch(8, 4, rng);
  double prev = nt_xent(b, 0.5).loss;
  for (int step = 0; step < 50; ++step) {
    const auto r = nt_xent(b, 0.5);
    for (std::size_t i = 0; i < b.embeddings.size(); ++i) b.embeddings[i] -= 0.01 * r.grad[i];
    for (int i = 0; i < b.n; ++i) {
      double sq = 0;
      for (int j = 0; j < b.dim; ++j) sq += b.embeddings[i * b.dim + j] * b.embeddings[i * b.dim + j];
      for (int j = 0; j < b.dim; ++j) b.embeddings[i * b.dim + j] /= std::sqrt(sq);
    }
    const double now = nt_xent(b, 0.5).loss;
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("nt_xent: invalid inputs") {
  std::mt19937_64 rng(6);
  auto b = random_batch(4, 3, rng);
  CHECK_THROWS_AS(nt_xent(b, 0.0), ConfigError);
  CHECK_THROWS_AS(nt_xent(b, -1.0), ConfigError);
  b.embeddings[0] *= 2.0;
  CHECK_THROWS_AS(nt_xent(b, 0.1), InputError);
  auto odd = random_batch(4, 3, rng);
  odd.n = 3;
  odd.embeddings.resize(9);
  CHECK_THROWS_AS(nt_xent(odd, 0.1), InputError);
}

TEST_CASE("learning-rate schedule: base at 0, peak at ramp end, back to base") {
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.ramp_epochs = 40;
  CHECK(learning_rate(cfg, 0.0) == 5e-4);
  CHECK(learning_rate(cfg, 40.0) == doctest::Approx(5e-2).epsilon(1e-15));
  CHECK(learning_rate(cfg, 20.0) == doctest::Approx((5e-4 + 5e-2) / 2));
  CHECK(learning_rate(cfg, 150.0) == doctest::Approx(5e-4));
  CHECK(learning_rate(cfg, 95.0) == doctest::Approx((5e-4 + 5e-2) / 2));
  TrainConfig bad;
  bad.lr_base = 0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.temperature = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("Adam: first step moves each weight by lr against the gradient sign") {
  EncoderArch a;
  a.n_mels = 8;
  a.n_frames = 8;
  a.base_channels = 2;
  a.down_blocks = 2;
  a.embedding_dim = 4;
  a.head_hidden = 3;
  auto p = init_encoder<float>(a, 1);
  const auto before = p;
  auto g = zeros_like(p);
  g.head.b2 = {1.0f, -2.0f, 0.5f, 0.0f};
  Adam adam(p, 0.9, 0.999, 1e-8);
  adam.step(p, g, 0.01);
  CHECK(p.head.b2[0] == doctest::Approx(before.head.b2[0] - 0.01).epsilon(1e-5));
  CHECK(p.head.b2[1] == doctest::Approx(before.head.b2[1] + 0.01).epsilon(1e-5));
  CHECK(p.head.b2[2] == doctest::Approx(before.head.b2[2] - 0.01).epsilon(1e-5));
  CHECK(p.head.b2[3] == before.head.b2[3]);
  CHECK(p.front.weight == before.front.weight);
  CHECK(p.front_bn.running_mean == before.front_bn.running_mean);
}

TEST_CASE("train_epoch: equal seeds give identical loss traces, independent of threads") {
  Rng rng(7);
  std::vector<Waveform> corpus;
  for (int i = 0; i < 4; ++i) corpus.push_back(synth_track(3.0, 16000, rng));
  std::vector<NoiseClip> noise{synth_noise(NoiseKind::kPink, 2.0, 16000, rng)};
  std::vector<RoomImpulseResponse> rirs{synth_rir(0.2, 16000, rng)};
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.segments_per_track = 2;
  cfg.epochs = 2;
  cfg.rng_seed = 11;
  const auto run = [&](int threads) {
    const int before = max_threads();
    set_threads(threads);
    Trainer t(init_encoder<float>(EncoderArch::with_width(0.125), 3), cfg, AugmentConfig{}, FrontendConfig{});
    std::vector<double> trace;
    for (int e = 0; e < 2; ++e) {
      const auto stats = t.train_epoch(corpus, {noise, rirs});
      CHECK(stats.steps == 4);
      trace.insert(trace.end(), stats.losses.begin(), stats.losses.end());
      CHECK(stats.learning_rates.front() == doctest::Approx(learning_rate(cfg, e)));
    }
    set_threads(before);
    return std::make_pair(trace, t.params().head.w1);
  };
  const auto a = run(1);
  const auto b = run(1);
  const auto c = run(2);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first == c.first);
  for (double l : a.first) CHECK(std::isfinite(l));
}

TEST_CASE("train_epoch: a corpus without usable segments is an error") {
  std::vector<Waveform> corpus{Waveform{std::vector<float>(8000, 0.1f), 16000}};
  TrainConfig cfg;
  cfg.batch_size = 4;
  Trainer t(init_encoder<float>(EncoderArch::with_width(0.125), 3), cfg, AugmentConfig{}, FrontendConfig{});
  CHECK_THROWS_AS(t.train_epoch(corpus, {}), InputError);
}

TEST_CASE("checkpoint: save/load round trip and corruption detection") {
  auto p = init_encoder<float>(EncoderArch::with_width(0.125), 5);
  p.attention.w_spect[3] = 0.25f;
  const auto path = temp_path("ckpt.bin");
  save_checkpoint(path, p);
  const auto q = load_checkpoint(path);
  CHECK(q.arch == p.arch);
  std::vector<const std::vector<float>*> orig;
  for_each_tensor(p, [&](const std::string&, const std::vector<float>& v, TensorRole) { orig.push_back(&v); });
  std::size_t i = 0;
  for_each_tensor(q, [&](const std::string&, const std::vector<float>& v, TensorRole) { CHECK(v == *orig[i++]); });
  LogMelSpec spec{64, 96, std::vector<float>(64 * 96, -3.0f)};
  spec.values[100] = 2.0f;
  CHECK(encode(spec, p) == encode(spec, q));

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  write(flipped);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::string magic = bytes;
  magic[0] = 'X';
  write(magic);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  write(bytes.substr(0, bytes.size() / 3));
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.bin")), InputError);
}
