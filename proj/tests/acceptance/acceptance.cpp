// Acceptance suite: one PASS/FAIL line per criterion on stdout, diagnostics on
// stderr. Usage: acceptance [criterion ...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "afp/augment.hpp"
#include "afp/config.hpp"
#include "afp/encoder.hpp"
#include "afp/error.hpp"
#include "afp/index.hpp"
#include "afp/parallel.hpp"
#include "afp/retrieval.hpp"
#include "afp/synth.hpp"
#include "afp/trainer.hpp"

using namespace afp;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// ---------------------------------------------------------------------------
// Tolerances

constexpr double kLossExactTol = 1e-9;
constexpr double kFiniteDiffRelTol = 1e-5;
constexpr double kMaskMassRelTol = 1e-6;
constexpr double kMaskOracleTol = 1e-12;
constexpr double kUnitNormTol = 1e-6;
constexpr double kRecallFloor = 0.995;
constexpr double kSnrTolDb = 1e-9;
constexpr double kReverbTol = 1e-12;
constexpr double kCleanAccuracyFloor = 95.0;
constexpr double kTrainBudgetS = 2.0 * 3600.0;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2e", v);
  return b;
}

std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

std::vector<float> unit_float(int d, std::mt19937_64& rng) {
  const auto v = randn(static_cast<std::size_t>(d), rng);
  double sq = 0;
  for (double x : v) sq += x * x;
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / std::sqrt(sq));
  return out;
}

std::vector<float> toward(std::span<const float> u, double cosine, std::mt19937_64& rng) {
  const auto r = unit_float(static_cast<int>(u.size()), rng);
  double proj = 0;
  for (std::size_t i = 0; i < u.size(); ++i) proj += static_cast<double>(r[i]) * u[i];
  std::vector<double> w(u.size());
  double sq = 0;
  for (std::size_t i = 0; i < u.size(); ++i) sq += (w[i] = r[i] - proj * u[i]) * w[i];
  const double s = std::sqrt(1 - cosine * cosine) / std::sqrt(sq);
  std::vector<float> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = static_cast<float>(cosine * u[i] + s * w[i]);
  return out;
}

// ---------------------------------------------------------------------------
// 1. NT-Xent

PairBatch unit_batch(int n, int d, std::mt19937_64& rng) {
  PairBatch b{n, d, randn(static_cast<std::size_t>(n) * d, rng)};
  for (int i = 0; i < n; ++i) {
    double sq = 0;
    for (int j = 0; j < d; ++j) sq += b.embeddings[i * d + j] * b.embeddings[i * d + j];
    for (int j = 0; j < d; ++j) b.embeddings[i * d + j] /= std::sqrt(sq);
  }
  return b;
}

double xent_oracle(const PairBatch& b, double tau) {
  const auto cos = [&](int i, int k) {
    double ab = 0, aa = 0, bb = 0;
    for (int j = 0; j < b.dim; ++j) {
      const double x = b.embeddings[i * b.dim + j], y = b.embeddings[k * b.dim + j];
      ab += x * y;
      aa += x * x;
      bb += y * y;
    }
    return ab / std::sqrt(aa * bb);
  };
  double total = 0;
  for (int i = 0; i < b.n; ++i) {
    const int j = i ^ 1;
    double denom = 0;
    for (int k = 0; k < b.n; ++k)
      if (k != i) denom += std::exp(cos(i, k) / tau);
    total += -std::log(std::exp(cos(i, j) / tau) / denom);
  }
  return total / b.n;
}

Outcome criterion_ntxent() {
  Outcome o;
  std::mt19937_64 rng(101);
  const auto two = unit_batch(2, 16, rng);
  const double l2 = nt_xent(two, 0.05).loss;
  o.require(l2 == 0.0, "N=2 loss is exactly 0");

  PairBatch same{4, 8, {}};
  const auto v = unit_batch(1, 8, rng).embeddings;
  for (int i = 0; i < 4; ++i) same.embeddings.insert(same.embeddings.end(), v.begin(), v.end());
  const double l4 = nt_xent(same, 0.05).loss;
  o.require(std::abs(l4 - std::log(3.0)) <= kLossExactTol, "N=4 identical gives ln 3");

  double worst_oracle = 0, worst_fd = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const double tau = trial % 2 ? 0.05 : 0.5;
    auto b = unit_batch(6, 8, rng);
    const auto r = nt_xent(b, tau);
    worst_oracle = std::max(worst_oracle, std::abs(r.loss - xent_oracle(b, tau)));
    double diff2 = 0, norm2 = 0;
    for (std::size_t i = 0; i < b.embeddings.size(); ++i) {
      const double keep = b.embeddings[i], h = 1e-7;
      b.embeddings[i] = keep + h;
      const double up = xent_oracle(b, tau);
      b.embeddings[i] = keep - h;
      const double down = xent_oracle(b, tau);
      b.embeddings[i] = keep;
      const double fd = (up - down) / (2 * h);
      diff2 += (fd - r.grad[i]) * (fd - r.grad[i]);
      norm2 += fd * fd;
    }
    worst_fd = std::max(worst_fd, std::sqrt(diff2 / norm2));
  }
  o.require(worst_oracle <= kLossExactTol, "N=6 oracle");
  o.require(worst_fd <= kFiniteDiffRelTol, "finite-difference gradient");
  o.detail << "N=2 loss " << l2 << ", N=4 |loss-ln3| " << sci(std::abs(l4 - std::log(3.0))) << ", oracle "
           << sci(worst_oracle) << ", grad rel " << sci(worst_fd);
  return o;
}

// ---------------------------------------------------------------------------
// 2. Attention

std::vector<double> mask_oracle(const std::vector<double>& x, const Attention<double>& p) {
  const int C = p.shape.channels, F = p.shape.freq, T = p.shape.time;
  std::vector<double> a(x.size());
  for (int c = 0; c < C; ++c) {
    std::vector<double> zt(T, 0.0), zf(F, 0.0);
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < F; ++f) zt[t] += x[(c * F + f) * T + t] * p.w_temp[c * F + f];
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < T; ++t) zf[f] += x[(c * F + f) * T + t] * p.w_spect[c * T + t];
    const double mt = *std::max_element(zt.begin(), zt.end()), mf = *std::max_element(zf.begin(), zf.end());
    double st = 0, sf = 0;
    for (double& z : zt) st += (z = std::exp(z - mt));
    for (double& z : zf) sf += (z = std::exp(z - mf));
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < T; ++t) a[(c * F + f) * T + t] = p.scale * (zf[f] / sf) * (zt[t] / st);
  }
  return a;
}

Outcome criterion_attention() {
  Outcome o;
  std::mt19937_64 rng(202);
  double worst_mass = 0, worst_oracle = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int C = 1 + static_cast<int>(rng() % 4), F = 1 + static_cast<int>(rng() % 12),
              T = 1 + static_cast<int>(rng() % 12);
    const double sd = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    Attention<double> p{{C, F, T}, randn(static_cast<std::size_t>(C) * T, rng, sd),
                        randn(static_cast<std::size_t>(C) * F, rng, sd), 100.0};
    const auto x = randn(static_cast<std::size_t>(C) * F * T, rng, 3.0);
    const auto a = attention_mask<double>(x, p);
    const auto ref = mask_oracle(x, p);
    for (int c = 0; c < C; ++c) {
      double mass = 0;
      for (int i = 0; i < F * T; ++i) mass += a[static_cast<std::size_t>(c) * F * T + i];
      worst_mass = std::max(worst_mass, std::abs(mass - 100.0) / 100.0);
    }
    for (std::size_t i = 0; i < a.size(); ++i)
      worst_oracle = std::max(worst_oracle, std::abs(a[i] - ref[i]) / std::max(1.0, std::abs(ref[i])));
  }
  o.require(worst_mass <= kMaskMassRelTol, "mask mass");
  o.require(worst_oracle <= kMaskOracleTol, "triple-loop oracle");

  // Gradient through the attention path of a tiny encoder: the mask weights,
  // and the front conv whose gradient flows back through the mask.
  EncoderArch arch;
  arch.n_mels = 8;
  arch.n_frames = 8;
  arch.base_channels = 2;
  arch.down_blocks = 2;
  arch.embedding_dim = 4;
  arch.head_hidden = 3;
  auto params = init_encoder<double>(arch, 7);
  params.attention.w_spect = randn(params.attention.w_spect.size(), rng, 0.3);
  params.attention.w_temp = randn(params.attention.w_temp.size(), rng, 0.3);
  const int batch = 3;
  const auto input = randn(static_cast<std::size_t>(batch) * 64, rng);
  const auto r = randn(static_cast<std::size_t>(batch) * 4, rng);
  const auto loss = [&](const EncoderParams<double>& q) {
    const auto e = encoder_forward<double>(input, batch, q, BnMode::kInference).embeddings();
    double l = 0;
    for (std::size_t i = 0; i < e.size(); ++i) l += r[i] * e[i];
    return l;
  };
  auto grads = zeros_like(params);
  encoder_backward<double>(encoder_forward<double>(input, batch, params, BnMode::kInference), params, r, grads);
  double worst_fd = 0;
  const auto check = [&](std::vector<double>& w, const std::vector<double>& g) {
    double diff2 = 0, norm2 = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i], h = 1e-6;
      w[i] = keep + h;
      const double up = loss(params);
      w[i] = keep - h;
      const double down = loss(params);
      w[i] = keep;
      const double fd = (up - down) / (2 * h);
      diff2 += (fd - g[i]) * (fd - g[i]);
      norm2 += fd * fd + g[i] * g[i];
    }
    worst_fd = std::max(worst_fd, norm2 > 0 ? std::sqrt(diff2 / norm2) : 0.0);
  };
  check(params.attention.w_spect, grads.attention.w_spect);
  check(params.attention.w_temp, grads.attention.w_temp);
  check(params.front.weight, grads.front.weight);
  o.require(worst_fd <= kFiniteDiffRelTol, "attention gradient");
  o.detail << "1000 tensors: mass rel " << sci(worst_mass) << ", oracle " << sci(worst_oracle) << ", grad rel "
           << sci(worst_fd);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Shape chain

Outcome criterion_shapes() {
  Outcome o;
  const EncoderArch arch;
  const auto params = init_encoder<float>(arch, 3);
  const std::vector<MapShape> table = {{32, 64, 96}, {32, 64, 96}, {64, 32, 48}, {128, 16, 24},
                                       {256, 8, 12}, {512, 4, 6},  {1024, 2, 3}};
  o.require(arch.shape_chain() == table, "declared chain");
  o.require(arch.flatten_size() == 6144 && arch.branch_input() == 48, "flatten 6144 = 128 x 48");
  o.require(params.front.weight.size() == 32u * 1 * 3 * 3 && params.front.stride == 1, "front conv 1 -> 32");

  // Push a batch through every residual block and compare realized shapes.
  std::mt19937_64 rng(33);
  Activations<float> x(2, {32, 64, 96});
  for (float& v : x.data) v = static_cast<float>(std::normal_distribution<double>()(rng));
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    x = resblock_forward<float>(x, params.blocks[b], BnMode::kInference, arch.bn_eps);
    o.require(x.shape == table[b + 1], "block " + std::to_string(b + 1) + " output shape");
  }
  o.require(params.head.branches == 128 && params.head.input == 48 && params.head.hidden == 32, "split head");

  std::vector<LogMelSpec> specs(4);
  for (auto& s : specs) {
    s.n_mels = 64;
    s.n_frames = 96;
    s.values.resize(64 * 96);
    for (float& v : s.values) v = static_cast<float>(std::normal_distribution<double>(-5.0, 3.0)(rng));
  }
  double worst = 0;
  for (const auto& e : encode_batch(specs, params)) {
    o.require(e.size() == 128, "embedding size 128");
    double sq = 0;
    for (float v : e) sq += static_cast<double>(v) * v;
    worst = std::max(worst, std::abs(std::sqrt(sq) - 1.0));
  }
  o.require(worst <= kUnitNormTol, "unit norm");
  o.detail << "1x64x96 -> 32x64x96 -> 32x64x96 -> 64x32x48 -> 128x16x24 -> 256x8x12 -> 512x4x6 -> 1024x2x3 -> "
           << arch.flatten_size() << " -> " << arch.embedding_dim << ", | |e|-1 | max " << sci(worst);
  return o;
}

// ---------------------------------------------------------------------------
// 4. LSH fidelity

Outcome criterion_lsh() {
  Outcome o;
  const int d = 128;
  const std::size_t n = 100000, queries = 10000;
  std::mt19937_64 rng(404);
  RecordStore store(d);
  for (std::size_t i = 0; i < n; ++i)
    store.add(static_cast<TrackId>(i / 291), static_cast<std::uint32_t>(i % 291), unit_float(d, rng));
  std::vector<std::vector<float>> qs;
  double mean_cos = 0;
  for (std::size_t i = 0; i < queries; ++i) {
    const auto src = store.embedding(rng() % n);
    qs.push_back(toward(src, 0.9, rng));
    double c = 0;
    for (int j = 0; j < d; ++j) c += static_cast<double>(src[j]) * qs.back()[j];
    mean_cos += c / queries;
  }
  const auto index = LshIndex::build(store, LshConfig{});
  std::vector<std::uint32_t> truth(queries);
  parallel_for(queries, [&](std::size_t i) { truth[i] = brute_force_query(store, qs[i], 1)[0].record; });

  std::vector<double> recall;
  for (int probes : {50, 100, 200}) {
    std::vector<char> hit(queries, 0);
    parallel_for(queries, [&](std::size_t i) {
      const auto r = index.query(qs[i], 1, probes);
      hit[i] = !r.empty() && r[0].record == truth[i];
    });
    recall.push_back(static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / queries);
  }
  o.require(recall[2] >= kRecallFloor, "recall@1 at 200 probes");
  o.require(recall[0] <= recall[1] && recall[1] <= recall[2], "monotone in probes");
  char b[160];
  std::snprintf(b, sizeof b, "100k x 128, 10k queries (mean cos %.4f): recall@1 %.4f / %.4f / %.4f at 50 / 100 / 200 probes",
                mean_cos, recall[0], recall[1], recall[2]);
  o.detail << b;
  return o;
}

// ---------------------------------------------------------------------------
// 5. Sequence search

struct Recount {
  bool ok = false;
  std::uint32_t start = 0;
  std::size_t count = 0;
};

Recount recount(const MatchList& ml, TrackId track) {
  std::uint32_t top = 0;
  for (const auto& row : ml)
    for (const auto& c : row) top = std::max(top, c.segment_index);
  Recount best;
  double best_sim = 0;
  for (std::uint32_t I = 0; I <= top; ++I) {
    std::size_t count = 0;
    double sim = 0;
    for (std::size_t m = 0; m < ml.size(); ++m) {
      float s = -INFINITY;
      for (const auto& c : ml[m])
        if (c.track_id == track && c.segment_index == I + m) s = std::max(s, c.similarity);
      if (s != -INFINITY) {
        ++count;
        sim += s;
      }
    }
    if (count > 0 && (!best.ok || count > best.count || (count == best.count && sim > best_sim))) {
      best = {true, I, count};
      best_sim = sim;
    }
  }
  best.ok = best.ok && 2 * best.count >= ml.size();
  return best;
}

Outcome criterion_sequence() {
  Outcome o;
  MatchList full;
  for (std::uint32_t m = 0; m < 21; ++m) full.push_back({{4, 100 + m, 0.9f}, {8, 3, 0.5f}});
  const auto r = localize(full, 4, 0.1);
  o.require(r.start_segment == 100 && r.consistency == 1.0 && std::abs(r.timestamp - 10.0) < 1e-12,
            "consistent run localizes to 100 / 10.0 s");

  const MatchList half = {{{1, 7, 0.9f}}, {{1, 50, 0.9f}}, {{1, 9, 0.9f}}, {{1, 90, 0.9f}}};
  const auto h = localize(half, 1, 0.1);
  o.require(h.start_segment == 7 && h.consistency == 0.5, "2 of 4 accepted");

  const MatchList quarter = {{{1, 7, 0.9f}}, {{1, 50, 0.9f}}, {{1, 30, 0.9f}}, {{1, 90, 0.9f}}};
  bool threw = false;
  try {
    localize(quarter, 1, 0.1);
  } catch (const LocalizationError&) {
    threw = true;
  }
  o.require(threw, "1 of 4 raises LocalizationError");

  std::mt19937_64 rng(505);
  int agree = 0, accepted = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t M = 1 + rng() % 30;
    const TrackId track = static_cast<TrackId>(rng() % 3);
    const auto s0 = static_cast<std::uint32_t>(rng() % 40);
    const double p = std::uniform_real_distribution<double>(0, 1)(rng);
    MatchList ml(M);
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t j = 0, k = 1 + rng() % 5; j < k; ++j) {
        const bool hit = std::uniform_real_distribution<double>(0, 1)(rng) < p;
        ml[m].push_back({hit ? track : static_cast<TrackId>(rng() % 3),
                         hit ? s0 + static_cast<std::uint32_t>(m) : static_cast<std::uint32_t>(rng() % 80),
                         static_cast<float>(rng() % 16) / 16.0f});
      }
      std::stable_sort(ml[m].begin(), ml[m].end(),
                       [](const Candidate& a, const Candidate& b) { return a.similarity > b.similarity; });
    }
    const auto want = recount(ml, track);
    try {
      const auto got = localize(ml, track, 0.1);
      ++accepted;
      if (want.ok && got.start_segment == want.start &&
          got.consistency == static_cast<double>(want.count) / static_cast<double>(M))
        ++agree;
    } catch (const LocalizationError&) {
      if (!want.ok) ++agree;
    }
  }
  o.require(agree == 1000, "recount oracle on 1000 fixtures");
  o.detail << "fixtures ok, recount agreement " << agree << "/1000 (" << accepted << " localized)";
  return o;
}

// ---------------------------------------------------------------------------
// 6. End-to-end toy experiment

struct Corpus {
  std::vector<Waveform> tracks;
  std::vector<NoiseClip> noise;
  std::vector<RoomImpulseResponse> rirs;
};

Rng seeded(std::uint32_t purpose, std::uint32_t item) {
  std::seed_seq s{6u, purpose, item};
  return Rng(s);
}

Outcome criterion_end_to_end() {
  Outcome o;
  const int n_tracks = 200;
  const double seconds = 30.0;
  const EngineConfig cfg = EngineConfig::toy();
  const FrontendConfig& fc = cfg.frontend;

  Corpus corpus;
  corpus.tracks.resize(n_tracks);
  parallel_for(n_tracks, [&](std::size_t i) {
    Rng rng = seeded(1, static_cast<std::uint32_t>(i));
    corpus.tracks[i] = synth_track(seconds, fc.sample_rate, rng);
  });
  for (std::uint32_t i = 0; i < 8; ++i) {
    Rng rng = seeded(2, i);
    corpus.noise.push_back(synth_noise(i % 2 ? NoiseKind::kPink : NoiseKind::kWhite, 10.0, fc.sample_rate, rng));
    corpus.rirs.push_back(synth_rir(std::uniform_real_distribution<double>(0.1, 0.8)(rng), fc.sample_rate, rng));
  }

  const auto control = init_encoder<float>(cfg.encoder, cfg.train.rng_seed);
  Trainer trainer(control, cfg.train, cfg.augment, fc);
  std::vector<double> losses;
  const auto t_train = Clock::now();
  for (int e = 0; e < cfg.train.epochs; ++e) {
    const auto s = trainer.train_epoch(corpus.tracks, {corpus.noise, corpus.rirs});
    losses.push_back(s.mean_loss);
    std::cerr << "  epoch " << e + 1 << "/" << cfg.train.epochs << " steps " << s.steps << " loss " << s.mean_loss
              << " lr " << s.learning_rates.back() << " (" << static_cast<int>(since(t_train)) << " s)\n";
  }
  const double train_s = since(t_train);

  std::vector<EvalQuery> clean, distorted;
  for (int i = 0; i < n_tracks; ++i) {
    Rng rng = seeded(3, static_cast<std::uint32_t>(i));
    const int hops = static_cast<int>(std::floor((seconds - 2.0) / fc.hop_seconds()));
    const double start = std::uniform_int_distribution<int>(0, hops)(rng) * fc.hop_seconds();
    const auto first = static_cast<std::size_t>(std::llround(start * fc.sample_rate));
    Waveform clip{std::vector<float>(corpus.tracks[i].samples.begin() + static_cast<std::ptrdiff_t>(first),
                                     corpus.tracks[i].samples.begin() +
                                         static_cast<std::ptrdiff_t>(first + 2 * fc.sample_rate)),
                  fc.sample_rate};
    const auto noise = synth_noise(NoiseKind::kWhite, 2.0, fc.sample_rate, rng);
    const auto rir = synth_rir(0.5, fc.sample_rate, rng);
    distorted.push_back({distort(clip, &noise, &rir, 15.0, rng), static_cast<TrackId>(i), start, "snr15_t60_0.5"});
    clean.push_back({std::move(clip), static_cast<TrackId>(i), start, "clean"});
  }

  struct Scores {
    std::size_t records = 0;
    double clean = 0, distorted = 0;
  };
  const auto score = [&](const EncoderParams<float>& params, const char* label) {
    const auto t0 = Clock::now();
    RecordStore store(params.arch.embedding_dim);
    for (int i = 0; i < n_tracks; ++i)
      fingerprint_track(store, corpus.tracks[i], static_cast<TrackId>(i), params, fc);
    const auto index = LshIndex::build(store, cfg.lsh);
    Scores s;
    s.records = store.size();
    s.clean = evaluate(clean, index, params, fc, EvalLevel::kSegment, cfg.lsh.top_k).overall.accuracy();
    s.distorted = evaluate(distorted, index, params, fc, EvalLevel::kSegment, cfg.lsh.top_k).overall.accuracy();
    std::cerr << "  " << label << ": " << s.records << " records, clean " << s.clean << "%, distorted "
              << s.distorted << "% (" << static_cast<int>(since(t0)) << " s)\n";
    return s;
  };
  const Scores trained = score(trainer.params(), "trained");
  const Scores untrained = score(control, "untrained");

  o.require(trained.records == 58200, "database holds 200 x 291 records");
  o.require(trained.clean >= kCleanAccuracyFloor, "clean segment top-1 >= 95%");
  o.require(trained.distorted > untrained.distorted, "distorted: trained beats untrained");
  o.require(losses.back() < losses.front(), "final epoch loss below first");
  o.require(train_s < kTrainBudgetS, "training under 2 h");
  char b[320];
  std::snprintf(b, sizeof b,
                "%zu records; clean %.1f%% (control %.1f%%); 15 dB + t60 0.5 s: %.1f%% vs control %.1f%%; "
                "loss %.4f -> %.4f; training %.0f s",
                trained.records, trained.clean, untrained.clean, trained.distorted, untrained.distorted,
                losses.front(), losses.back(), train_s);
  o.detail << b;
  return o;
}

// ---------------------------------------------------------------------------
// 7. Augmentation contracts

Outcome criterion_augment() {
  Outcome o;
  std::mt19937_64 rng(707);
  double worst_snr = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 100 + rng() % 20000;
    const double amp = std::pow(10.0, std::uniform_real_distribution<double>(-3, 0)(rng));
    std::vector<float> sig(n), noise(n);
    std::normal_distribution<double> g;
    for (auto& v : sig) v = static_cast<float>(amp * g(rng));
    for (auto& v : noise) v = static_cast<float>(g(rng) * 0.3);
    const double snr = std::uniform_real_distribution<double>(0, 25)(rng);
    const auto mix = mix_noise(sig, noise, snr);
    double ps = 0, pn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ps += static_cast<double>(sig[i]) * sig[i];
      pn += (mix.gain * noise[i]) * (mix.gain * noise[i]);
    }
    worst_snr = std::max(worst_snr, std::abs(10 * std::log10(ps / pn) - snr));
  }
  o.require(worst_snr <= kSnrTolDb, "measured SNR");

  double worst_conv = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 3000, k = 1 + rng() % (trial % 2 ? 16 : 600);
    const auto x = randn(n, rng), h = randn(k, rng);
    const auto y = apply_reverb(x, h);
    double peak = 0;
    for (double v : h) peak = std::max(peak, std::abs(v));
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < k && j <= i; ++j) acc += (h[j] / peak) * x[i - j];
      worst_conv = std::max(worst_conv, std::abs(acc - y[i]));
    }
  }
  o.require(worst_conv <= kReverbTol, "reverb vs direct convolution");

  AugmentConfig off;
  off.enable_offset = off.enable_reverb = off.enable_noise = off.enable_spec_augment = false;
  const FrontendConfig fc;
  const LogMelExtractor extractor(fc);
  bool identity = true;
  for (int t = 0; t < 20; ++t) {
    Rng trng(t);
    const auto track = synth_track(3.0, fc.sample_rate, trng);
    const double start = std::uniform_real_distribution<double>(0, 2.0)(trng);
    const auto p = make_pair(track, start, {}, {}, extractor, off, trng);
    identity = identity && p.anchor.values == p.positive.values;
  }
  o.require(identity, "all-disabled make_pair is the identity");
  o.detail << "2000 mixes: |SNR err| max " << sci(worst_snr) << " dB; 200 convolutions: max err " << sci(worst_conv)
           << "; identity pairs " << (identity ? "20/20" : "broken");
  return o;
}

// ---------------------------------------------------------------------------
// 8. Persistence

Outcome criterion_persistence() {
  Outcome o;
  std::mt19937_64 rng(808);
  RecordStore store(128);
  for (std::size_t i = 0; i < 20000; ++i)
    store.add(static_cast<TrackId>(i / 291), static_cast<std::uint32_t>(i % 291), unit_float(128, rng));
  const fs::path dir = fs::temp_directory_path() / ("afp_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto path = dir / "db.afpd";
  save_database(path, store);
  const auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string original = bytes(path);
  o.require(original.size() == database_file_size(store.size(), 128), "exact file size");

  const auto loaded = load_database(path);
  o.require(loaded == store, "records equal after load");
  save_database(dir / "again.afpd", loaded);
  o.require(bytes(dir / "again.afpd") == original, "re-save is byte identical");

  const auto before = LshIndex::build(store, LshConfig{});
  const auto after = LshIndex::build(loaded, LshConfig{});
  int same = 0;
  for (int q = 0; q < 500; ++q) {
    const auto v = toward(store.embedding(rng() % store.size()), 0.9, rng);
    const auto a = before.query(v, 5), b = after.query(v, 5);
    bool eq = a.size() == b.size();
    for (std::size_t i = 0; eq && i < a.size(); ++i) eq = a[i].record == b[i].record && a[i].similarity == b[i].similarity;
    same += eq;
  }
  o.require(same == 500, "queries identical after reload");

  const auto rejects = [&](std::size_t pos) {
    std::string bad = original;
    bad[pos] ^= 0x20;
    std::ofstream(dir / "bad.afpd", std::ios::binary | std::ios::trunc) << bad;
    try {
      load_database(dir / "bad.afpd");
    } catch (const FormatError&) {
      return true;
    }
    return false;
  };
  o.require(rejects(1), "corrupted magic rejected");
  o.require(rejects(original.size() / 2), "corrupted payload fails CRC");
  o.require(rejects(original.size() - 1), "corrupted CRC rejected");
  fs::remove_all(dir);
  o.detail << store.size() << " records, " << original.size() << " bytes, " << same
           << "/500 queries identical after reload, magic/payload/CRC corruption rejected";
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "NT-Xent exactness", 1.0, criterion_ntxent},
      {2, "attention correctness", 10.0, criterion_attention},
      {3, "architecture shape chain", 10.0, criterion_shapes},
      {4, "LSH fidelity", 300.0, criterion_lsh},
      {5, "sequence search exactness", 10.0, criterion_sequence},
      {6, "end-to-end toy experiment", 4.0 * 3600.0, criterion_end_to_end},
      {7, "augmentation contracts", 30.0, criterion_augment},
      {8, "persistence", 30.0, criterion_persistence},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double elapsed = since(t0);
    if (elapsed > c.budget_s) o.require(false, "runtime budget " + std::to_string(c.budget_s) + " s");
    char head[128];
    std::snprintf(head, sizeof head, "criterion %d %s %s (%.2f s): ", c.id, o.pass ? "PASS" : "FAIL", c.name, elapsed);
    std::cout << head << o.detail.str() << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
