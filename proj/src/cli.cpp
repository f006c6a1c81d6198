#include "afp/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "afp/checkpoint.hpp"
#include "afp/config.hpp"
#include "afp/error.hpp"
#include "afp/parallel.hpp"
#include "afp/retrieval.hpp"
#include "afp/synth.hpp"
#include "json.hpp"

namespace afp::cli {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// Independent generator per (seed, purpose, item).
Rng stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t item) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(item),
                    static_cast<std::uint32_t>(item >> 32)};
  return Rng(seq);
}

std::vector<fs::path> list_wavs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no .wav files in " + dir.string());
  return files;
}

Waveform read_at_rate(const fs::path& path, int rate) {
  Waveform w = read_wav(path);
  return w.sample_rate == rate ? w : resample(w, rate);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path sidecar(const fs::path& db, const char* suffix) { return fs::path(db.string() + suffix); }

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

EvalLevel parse_level(const std::string& s) {
  if (s == "segment") return EvalLevel::kSegment;
  if (s == "audio") return EvalLevel::kAudio;
  throw ConfigError("--level must be 'segment' or 'audio'");
}

// ---------------------------------------------------------------------------
// Shared option groups

struct ConfigOptions {
  std::string config_path;
  bool toy = false;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (flags override it)");
    app->add_flag("--toy", toy, "Start from the desk-scale preset instead of full scale");
    app->add_option("--seed", seed, "Seed for every randomized stage");
  }

  EngineConfig resolve() const {
    EngineConfig cfg = toy ? EngineConfig::toy() : EngineConfig{};
    if (!config_path.empty()) cfg = load_config(config_path, cfg);
    if (seed) cfg.set_seed(*seed);
    return cfg;
  }
};

struct Database {
  LshIndex index;
  TrackNames names;
  FrontendConfig frontend;

  static Database open(const fs::path& db, std::optional<int> probes) {
    RecordStore store = load_database(db);
    auto names = load_track_names(sidecar(db, ".tracks.tsv"));
    auto [frontend, lsh] = parse_index_config(read_text(sidecar(db, ".index.json")));
    if (probes) lsh.n_probes = *probes;
    lsh.validate();
    return {LshIndex::build(std::move(store), lsh), std::move(names), frontend};
  }

  std::string name(TrackId id) const {
    const auto it = names.find(id);
    return it == names.end() ? std::to_string(id) : it->second;
  }
};

EncoderParams<float> open_checkpoint(const fs::path& path, const Database& db) {
  auto params = load_checkpoint(path);
  if (params.arch.embedding_dim != db.index.records().dim())
    throw InputError("checkpoint embedding dimension " + std::to_string(params.arch.embedding_dim) +
                     " does not match database dimension " + std::to_string(db.index.records().dim()));
  if (params.arch.n_mels != db.frontend.n_mels || params.arch.n_frames != db.frontend.n_frames)
    throw InputError("checkpoint input shape does not match the database frontend");
  return params;
}

struct ManifestEntry {
  fs::path path;
  std::string track;
  double start = 0.0;
  std::string condition;
};

// query_path \t track_name \t true_start_s [\t condition]; '#' comments and a
// header row are skipped. Relative paths resolve against the manifest's folder.
std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#' || line.rfind("query_path\t", 0) == 0) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (cols.size() < 3 || cols.size() > 4) throw FormatError(where + ": expected 3 or 4 tab-separated columns");
    ManifestEntry e;
    e.path = fs::path(cols[0]).is_absolute() ? fs::path(cols[0]) : path.parent_path() / cols[0];
    e.track = cols[1];
    try {
      std::size_t used = 0;
      e.start = std::stod(cols[2], &used);
      if (used != cols[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw FormatError(where + ": bad true_start_s '" + cols[2] + "'");
    }
    e.condition = cols.size() == 4 ? cols[3] : "all";
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<EvalQuery> load_queries(const std::vector<ManifestEntry>& manifest, const Database& db) {
  std::map<std::string, TrackId> by_name;
  for (const auto& [id, name] : db.names) by_name[name] = id;
  std::vector<EvalQuery> queries;
  for (const auto& e : manifest) {
    const auto it = by_name.find(e.track);
    if (it == by_name.end()) throw InputError("manifest names unknown track '" + e.track + "'");
    queries.push_back({read_at_rate(e.path, db.frontend.sample_rate), it->second, e.start, e.condition});
  }
  return queries;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::string out;
  int tracks = 10;
  double duration = 30.0;
  int noise = 4;
  double noise_seconds = 10.0;
  int rirs = 4;
  double t60_min = 0.1;
  double t60_max = 0.8;
  int queries = 0;
  double query_seconds = 2.0;
  double query_snr = 15.0;
  double query_t60 = 0.5;
  int rate = 16000;
  std::uint64_t seed = 0;
};

enum Purpose : std::uint64_t { kTrack = 1, kNoise, kRir, kQuery };

int cmd_synth(const SynthOptions& o, std::ostream& out, std::ostream& err) {
  if (o.tracks < 1 || o.duration <= 0 || o.noise < 0 || o.rirs < 0 || o.queries < 0 || o.rate <= 0)
    throw ConfigError("synth: counts must be non-negative, tracks >= 1, durations positive");
  if (!(o.t60_min > 0 && o.t60_min <= o.t60_max)) throw ConfigError("synth: need 0 < t60-min <= t60-max");
  const fs::path root(o.out);
  for (const char* sub : {"tracks", "noise", "rir"}) fs::create_directories(root / sub);

  std::vector<Waveform> tracks(static_cast<std::size_t>(o.tracks));
  std::vector<std::string> names(tracks.size());
  parallel_for(tracks.size(), [&](std::size_t i) {
    Rng rng = stream(o.seed, kTrack, i);
    tracks[i] = synth_track(o.duration, o.rate, rng);
    char name[32];
    std::snprintf(name, sizeof name, "track_%04zu.wav", i);
    names[i] = name;
    write_wav(root / "tracks" / name, tracks[i]);
  });
  for (int i = 0; i < o.noise; ++i) {
    Rng rng = stream(o.seed, kNoise, static_cast<std::uint64_t>(i));
    const bool pink = i % 2 == 1;
    const auto clip = synth_noise(pink ? NoiseKind::kPink : NoiseKind::kWhite, o.noise_seconds, o.rate, rng);
    char name[32];
    std::snprintf(name, sizeof name, "%s_%03d.wav", pink ? "pink" : "white", i);
    write_wav(root / "noise" / name, {clip.samples, clip.sample_rate});
  }
  for (int i = 0; i < o.rirs; ++i) {
    Rng rng = stream(o.seed, kRir, static_cast<std::uint64_t>(i));
    const double t60 = std::uniform_real_distribution<double>(o.t60_min, o.t60_max)(rng);
    const auto rir = synth_rir(t60, o.rate, rng);
    char name[48];
    std::snprintf(name, sizeof name, "rir_%03d_t60_%.3f.wav", i, t60);
    write_wav(root / "rir" / name, {rir.taps, rir.sample_rate});
  }

  if (o.queries > 0) {
    if (o.query_seconds > o.duration) throw ConfigError("synth: query longer than the tracks");
    fs::create_directories(root / "queries");
    std::ofstream manifest(root / "manifest.tsv", std::ios::trunc);
    manifest << "query_path\ttrack_name\ttrue_start_s\tcondition\n";
    const FrontendConfig fcfg;
    const auto hops = static_cast<long>(std::floor((o.duration - o.query_seconds) / fcfg.hop_seconds()));
    const auto qlen = static_cast<std::size_t>(std::llround(o.query_seconds * o.rate));
    char distorted[64];
    std::snprintf(distorted, sizeof distorted, "snr%g_t60_%g", o.query_snr, o.query_t60);
    for (int q = 0; q < o.queries; ++q) {
      Rng rng = stream(o.seed, kQuery, static_cast<std::uint64_t>(q));
      const auto t = std::uniform_int_distribution<std::size_t>(0, tracks.size() - 1)(rng);
      const long hop = std::uniform_int_distribution<long>(0, std::max(0L, hops))(rng);
      const double start = static_cast<double>(hop) * fcfg.hop_seconds();
      const auto first = static_cast<std::size_t>(std::llround(start * o.rate));
      Waveform clip{std::vector<float>(tracks[t].samples.begin() + static_cast<std::ptrdiff_t>(first),
                                       tracks[t].samples.begin() + static_cast<std::ptrdiff_t>(first + qlen)),
                    o.rate};
      const auto noise = synth_noise(NoiseKind::kWhite, o.query_seconds, o.rate, rng);
      const auto rir = synth_rir(o.query_t60, o.rate, rng);
      const Waveform degraded = distort(clip, &noise, &rir, o.query_snr, rng);
      char clean_name[32], noisy_name[32];
      std::snprintf(clean_name, sizeof clean_name, "q%05d_clean.wav", q);
      std::snprintf(noisy_name, sizeof noisy_name, "q%05d_distorted.wav", q);
      write_wav(root / "queries" / clean_name, clip);
      write_wav(root / "queries" / noisy_name, degraded);
      const std::string when = fixed(start, 3);
      manifest << "queries/" << clean_name << '\t' << names[t] << '\t' << when << "\tclean\n";
      manifest << "queries/" << noisy_name << '\t' << names[t] << '\t' << when << '\t' << distorted << '\n';
    }
  }
  err << "synth: " << o.tracks << " tracks, " << o.noise << " noise clips, " << o.rirs << " RIRs, "
      << o.queries << " query pairs -> " << root.string() << '\n';
  out << root.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  ConfigOptions config;
  std::string corpus, noise_dir, rir_dir, out, log;
  std::optional<int> epochs, batch_size;
};

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  EngineConfig cfg = o.config.resolve();
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  cfg.validate();
  const int rate = cfg.frontend.sample_rate;

  std::vector<Waveform> corpus;
  for (const auto& p : list_wavs(o.corpus)) corpus.push_back(read_at_rate(p, rate));
  std::vector<NoiseClip> noise;
  std::vector<RoomImpulseResponse> rirs;
  if (!o.noise_dir.empty()) noise = load_noise_bank(o.noise_dir, rate);
  if (!o.rir_dir.empty()) rirs = load_rir_bank(o.rir_dir, rate);
  err << "train: " << corpus.size() << " tracks, " << noise.size() << " noise clips, " << rirs.size()
      << " RIRs, width " << cfg.width() << ", N " << cfg.train.batch_size << ", " << cfg.train.epochs
      << " epochs\n";

  std::ofstream log;
  if (!o.log.empty()) {
    log.open(o.log, std::ios::trunc);
    if (!log) throw InputError("cannot open log file " + o.log);
    log << "epoch,steps,mean_loss,lr_first,lr_last\n" << std::setprecision(10);
  }
  Trainer trainer(init_encoder<float>(cfg.encoder, cfg.train.rng_seed), cfg.train, cfg.augment, cfg.frontend);
  const TrainingBanks banks{noise, rirs};
  for (int e = 0; e < cfg.train.epochs; ++e) {
    const auto t0 = Clock::now();
    const EpochStats s = trainer.train_epoch(corpus, banks);
    err << "epoch " << s.epoch + 1 << "/" << cfg.train.epochs << " steps " << s.steps << " loss "
        << fixed(s.mean_loss, 5) << " lr " << s.learning_rates.back() << " (" << fixed(seconds_since(t0), 1)
        << " s)\n";
    if (log)
      log << s.epoch << ',' << s.steps << ',' << s.mean_loss << ',' << s.learning_rates.front() << ','
          << s.learning_rates.back() << '\n';
  }
  save_checkpoint(o.out, trainer.params());
  out << o.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// ingest

struct IngestOptions {
  ConfigOptions config;
  std::string corpus, checkpoint, out;
  bool gate = false;
};

int cmd_ingest(const IngestOptions& o, std::ostream& out, std::ostream& err) {
  EngineConfig cfg = o.config.resolve();
  if (o.gate) cfg.frontend.gate_on_ingest = true;
  const auto params = load_checkpoint(o.checkpoint);
  cfg.encoder = params.arch;
  cfg.validate();

  const auto files = list_wavs(o.corpus);
  const auto t0 = Clock::now();
  RecordStore store(params.arch.embedding_dim);
  TrackNames names;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto id = static_cast<TrackId>(i);
    names[id] = files[i].filename().string();
    fingerprint_track(store, read_at_rate(files[i], cfg.frontend.sample_rate), id, params, cfg.frontend);
  }
  const double embed_s = seconds_since(t0);

  const fs::path db(o.out);
  if (db.has_parent_path()) fs::create_directories(db.parent_path());
  save_database(db, store);
  save_track_names(sidecar(db, ".tracks.tsv"), names);
  std::ofstream(sidecar(db, ".index.json"), std::ios::trunc) << dump_index_config(cfg.frontend, cfg.lsh);

  const auto t1 = Clock::now();
  const auto index = LshIndex::build(store, cfg.lsh);
  const double build_s = seconds_since(t1);
  std::size_t buckets = 0;
  for (int t = 0; t < cfg.lsh.n_tables; ++t) {
    std::set<std::uint32_t> codes;
    for (std::size_t r = 0; r < store.size(); ++r) codes.insert(index.code(t, store.embedding(r)));
    buckets += codes.size();
  }
  const double occupancy = static_cast<double>(store.size()) * cfg.lsh.n_tables / static_cast<double>(buckets);

  err << "ingest: " << files.size() << " tracks embedded in " << fixed(embed_s, 1) << " s; lsh "
      << cfg.lsh.n_tables << "x" << cfg.lsh.hash_bits << " built in " << fixed(build_s, 2)
      << " s, mean bucket occupancy " << fixed(occupancy, 2) << '\n';
  out << "records " << store.size() << "\ntracks " << names.size() << "\ndim " << store.dim() << "\nbytes "
      << fs::file_size(db) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// query

struct QueryOptions {
  std::string db, checkpoint, wav, level = "segment";
  std::optional<int> k, probes;
  bool json = false;
};

int cmd_query(const QueryOptions& o, std::ostream& out, std::ostream&) {
  const EvalLevel level = parse_level(o.level);
  const Database db = Database::open(o.db, o.probes);
  const auto params = open_checkpoint(o.checkpoint, db);
  const int k = o.k.value_or(db.index.config().top_k);
  if (k < 1) throw ConfigError("--k must be >= 1");
  const auto fp = fingerprint_query(read_at_rate(o.wav, db.frontend.sample_rate), params, db.frontend);
  const QueryAnswer a = answer(lookup(db.index, fp, k), fp.hop_s);
  const bool located = level == EvalLevel::kSegment && a.located.has_value();

  if (o.json) {
    nlohmann::json j;
    j["query"] = o.wav;
    j["track"] = db.name(a.identified.track_id);
    j["track_id"] = a.identified.track_id;
    j["votes"] = a.identified.votes;
    j["segments"] = fp.subs.size();
    j["located"] = located;
    if (located) {
      j["timestamp"] = a.located->timestamp;
      j["start_segment"] = a.located->start_segment;
      j["consistency"] = a.located->consistency;
    }
    out << j.dump() << '\n';
    return 0;
  }
  out << "track " << db.name(a.identified.track_id) << " votes " << a.identified.votes << "/" << fp.subs.size();
  if (located)
    out << " timestamp " << fixed(a.located->timestamp, 3) << " consistency " << fixed(a.located->consistency, 3);
  else if (level == EvalLevel::kSegment)
    out << " localization failed";
  out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string db, checkpoint, manifest, out, level = "segment";
  std::optional<int> k, probes;
};

int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  const EvalLevel level = parse_level(o.level);
  const Database db = Database::open(o.db, o.probes);
  const auto params = open_checkpoint(o.checkpoint, db);
  const int k = o.k.value_or(db.index.config().top_k);
  if (k < 1) throw ConfigError("--k must be >= 1");
  const auto queries = load_queries(read_manifest(o.manifest), db);
  const auto t0 = Clock::now();
  const EvalReport report = evaluate(queries, db.index, params, db.frontend, level, k);
  if (o.out.empty()) {
    write_report_csv(out, report);
  } else {
    std::ofstream csv(o.out, std::ios::trunc);
    if (!csv) throw InputError("cannot open " + o.out);
    write_report_csv(csv, report);
    out << o.out << '\n';
  }
  err << "eval: " << queries.size() << " queries in " << fixed(seconds_since(t0), 1) << " s, accuracy "
      << fixed(report.overall.accuracy(), 2) << "%\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::string db, checkpoint, manifest;
  int samples = 10000;
  std::optional<int> k, probes;
};

int cmd_bench(const BenchOptions& o, std::ostream& out, std::ostream& err) {
  if (o.samples < 0) throw ConfigError("--samples must be >= 0");
  const Database db = Database::open(o.db, o.probes);
  const auto params = open_checkpoint(o.checkpoint, db);
  const int k = o.k.value_or(db.index.config().top_k);
  if (k < 1) throw ConfigError("--k must be >= 1");
  const auto& records = db.index.records();

  const fs::path path(o.db);
  const auto db_bytes = fs::file_size(path);
  const auto expected = database_file_size(records.size(), records.dim());
  const auto side = fs::file_size(sidecar(path, ".tracks.tsv")) + fs::file_size(sidecar(path, ".index.json"));
  out << "database records " << records.size() << " dim " << records.dim() << " bytes " << db_bytes
      << " expected " << expected << (db_bytes == expected ? " (exact)" : " (MISMATCH)") << " sidecars "
      << side << " total " << db_bytes + side << '\n';

  const auto manifest = read_manifest(o.manifest);
  if (manifest.empty()) {
    out << "queries 0 (empty manifest)\n";
    return 0;
  }
  const auto queries = load_queries(manifest, db);

  std::vector<double> query_s, lookup_ms;
  std::vector<std::vector<float>> subs;
  for (const EvalQuery& q : queries) {
    const auto t0 = Clock::now();
    const auto fp = fingerprint_query(q.audio, params, db.frontend);
    MatchList ml(fp.subs.size());
    for (std::size_t m = 0; m < fp.subs.size(); ++m) {
      const auto t1 = Clock::now();
      for (const Match& hit : db.index.query(fp.subs[m], k))
        ml[m].push_back({hit.track_id, hit.segment_index, hit.similarity});
      lookup_ms.push_back(1e3 * seconds_since(t1));
    }
    (void)answer(ml, fp.hop_s);
    query_s.push_back(seconds_since(t0));
    for (auto& s : fp.subs) subs.push_back(s);
  }

  // Evenly spaced sample of subfingerprints for the oracle comparison.
  const std::size_t n = std::min(subs.size(), static_cast<std::size_t>(o.samples));
  std::size_t agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& q = subs[i * subs.size() / n];
    const auto lsh = db.index.query(q, 1);
    const auto exact = brute_force_query(records, q, 1);
    if (!lsh.empty() && lsh[0].record == exact[0].record) ++agree;
  }

  const auto row = [&](const char* what, const std::vector<double>& v, const char* unit, int digits) {
    out << what << " n " << v.size() << " p50 " << fixed(percentile(v, 50), digits) << " p90 "
        << fixed(percentile(v, 90), digits) << " p99 " << fixed(percentile(v, 99), digits) << " max "
        << fixed(percentile(v, 100), digits) << ' ' << unit << '\n';
  };
  out << "queries " << queries.size() << '\n';
  row("lookup_latency", lookup_ms, "ms", 3);
  row("query_latency", query_s, "s", 3);
  out << "recall@1 " << agree << "/" << n << " " << fixed(n ? static_cast<double>(agree) / n : 0.0, 4) << '\n';
  err << "bench: threads " << max_threads() << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural audio fingerprinting: synthesize, train, ingest, query, evaluate", "afp"};
  app.require_subcommand(1);
  int threads = 0;
  const auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
  };

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Write synthetic tracks, noise/RIR banks and optional queries");
  synth->add_option("--out", so.out, "Output directory")->required();
  synth->add_option("--tracks", so.tracks, "Number of tracks");
  synth->add_option("--duration", so.duration, "Track length in seconds");
  synth->add_option("--noise", so.noise, "Number of noise clips (white and pink alternate)");
  synth->add_option("--noise-seconds", so.noise_seconds, "Noise clip length in seconds");
  synth->add_option("--rirs", so.rirs, "Number of room impulse responses");
  synth->add_option("--t60-min", so.t60_min, "Smallest RIR t60 in seconds");
  synth->add_option("--t60-max", so.t60_max, "Largest RIR t60 in seconds");
  synth->add_option("--queries", so.queries, "Query clips to cut (each also written distorted)");
  synth->add_option("--query-seconds", so.query_seconds, "Query length in seconds");
  synth->add_option("--query-snr", so.query_snr, "White-noise SNR of distorted queries in dB");
  synth->add_option("--query-t60", so.query_t60, "RIR t60 of distorted queries in seconds");
  synth->add_option("--rate", so.rate, "Sample rate in Hz");
  synth->add_option("--seed", so.seed, "Random seed");
  add_threads(synth);

  TrainOptions to;
  auto* train = app.add_subcommand("train", "Contrastive training of the encoder");
  to.config.add(train);
  train->add_option("--corpus", to.corpus, "Directory of training WAV tracks")->required();
  train->add_option("--noise", to.noise_dir, "Directory of noise WAV clips");
  train->add_option("--rir", to.rir_dir, "Directory of RIR WAV files");
  train->add_option("--out", to.out, "Checkpoint output path")->required();
  train->add_option("--log", to.log, "CSV log of per-epoch loss and learning rate");
  train->add_option("--epochs", to.epochs, "Override train.epochs");
  train->add_option("--batch-size", to.batch_size, "Override train.batch_size");
  add_threads(train);

  IngestOptions io;
  auto* ingest = app.add_subcommand("ingest", "Fingerprint a corpus into a database");
  io.config.add(ingest);
  ingest->add_option("--corpus", io.corpus, "Directory of reference WAV tracks")->required();
  ingest->add_option("--checkpoint", io.checkpoint, "Encoder checkpoint")->required();
  ingest->add_option("--out", io.out, "Database output path")->required();
  ingest->add_flag("--gate", io.gate, "Skip segments failing the energy gate");
  add_threads(ingest);

  QueryOptions qo;
  auto* query = app.add_subcommand("query", "Identify and localize one query clip");
  query->add_option("--db", qo.db, "Database path")->required();
  query->add_option("--checkpoint", qo.checkpoint, "Encoder checkpoint")->required();
  query->add_option("--wav,wav", qo.wav, "Query WAV file")->required();
  query->add_option("--k", qo.k, "Candidates per subfingerprint (default lsh.top_k)");
  query->add_option("--probes", qo.probes, "Override lsh.n_probes");
  query->add_option("--level", qo.level, "segment or audio");
  query->add_flag("--json", qo.json, "Emit one JSON object");
  add_threads(query);

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "Top-1 hit rate over a query manifest");
  eval->add_option("--db", eo.db, "Database path")->required();
  eval->add_option("--checkpoint", eo.checkpoint, "Encoder checkpoint")->required();
  eval->add_option("--manifest", eo.manifest, "TSV: query_path, track_name, true_start_s, condition")->required();
  eval->add_option("--out", eo.out, "CSV output path (default stdout)");
  eval->add_option("--k", eo.k, "Candidates per subfingerprint (default lsh.top_k)");
  eval->add_option("--probes", eo.probes, "Override lsh.n_probes");
  eval->add_option("--level", eo.level, "segment or audio");
  add_threads(eval);

  BenchOptions bo;
  auto* bench = app.add_subcommand("bench", "Latency, LSH recall and database size");
  bench->add_option("--db", bo.db, "Database path")->required();
  bench->add_option("--checkpoint", bo.checkpoint, "Encoder checkpoint")->required();
  bench->add_option("--manifest", bo.manifest, "Query manifest TSV")->required();
  bench->add_option("--samples", bo.samples, "Subfingerprints compared against brute force");
  bench->add_option("--k", bo.k, "Candidates per subfingerprint (default lsh.top_k)");
  bench->add_option("--probes", bo.probes, "Override lsh.n_probes");
  add_threads(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    const auto parsed = app.get_subcommands();
    err << "error: " << e.what() << "\n\n" << (parsed.empty() ? app.help() : parsed.front()->help());
    return 2;
  }

  try {
    if (threads > 0) set_threads(threads);
    if (*synth) return cmd_synth(so, out, err);
    if (*train) return cmd_train(to, out, err);
    if (*ingest) return cmd_ingest(io, out, err);
    if (*query) return cmd_query(qo, out, err);
    if (*eval) return cmd_eval(eo, out, err);
    if (*bench) return cmd_bench(bo, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace afp::cli
