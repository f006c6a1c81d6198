#include "afp/index.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>
#include <tuple>

#include "afp/error.hpp"
#include "afp/kernels.hpp"
#include "afp/parallel.hpp"
#include "binio.hpp"

namespace afp {

// ---------------------------------------------------------------------------
// Records

void RecordStore::add(TrackId track, std::uint32_t segment, std::span<const float> embedding) {
  if (dim_ == 0) dim_ = static_cast<int>(embedding.size());
  if (embedding.size() != static_cast<std::size_t>(dim_) || dim_ == 0)
    throw InputError("record store: embedding dimension mismatch");
  tracks_.push_back(track);
  segments_.push_back(segment);
  data_.insert(data_.end(), embedding.begin(), embedding.end());
}

FingerprintRecord RecordStore::record(std::size_t i) const {
  const auto e = embedding(i);
  return {tracks_[i], segments_[i], std::vector<float>(e.begin(), e.end())};
}

void LshConfig::validate() const {
  if (n_tables < 1) throw ConfigError("lsh.n_tables must be >= 1");
  if (hash_bits < 1 || hash_bits > 30) throw ConfigError("lsh.hash_bits must lie in [1, 30]");
  if (n_probes < n_tables) throw ConfigError("lsh.n_probes must be >= lsh.n_tables");
  if (top_k < 1) throw ConfigError("lsh.top_k must be >= 1");
}

namespace {

bool ranks_before(const Match& a, const Match& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  if (a.track_id != b.track_id) return a.track_id < b.track_id;
  return a.segment_index < b.segment_index;
}

std::vector<Match> top_k(std::vector<Match> all, int k) {
  const auto keep = std::min(all.size(), static_cast<std::size_t>(k));
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), ranks_before);
  all.resize(keep);
  return all;
}

void check_query(const RecordStore& records, std::span<const float> q, int k) {
  if (records.empty()) throw InputError("query: empty record store");
  if (q.size() != static_cast<std::size_t>(records.dim())) throw InputError("query: dimension mismatch");
  if (k < 1) throw InputError("query: k must be >= 1");
}

}  // namespace

std::vector<Match> brute_force_query(const RecordStore& records, std::span<const float> q, int k) {
  check_query(records, q, k);
  std::vector<float> scores(records.size());
  kernels::dot_rows(records.matrix(), static_cast<std::size_t>(records.dim()), q, scores);
  std::vector<Match> all(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    all[i] = {static_cast<std::uint32_t>(i), records.track(i), records.segment(i), scores[i]};
  return top_k(std::move(all), k);
}

// ---------------------------------------------------------------------------
// LSH

LshIndex LshIndex::build(RecordStore records, const LshConfig& cfg) {
  cfg.validate();
  if (records.empty()) throw InputError("lsh build: empty record store");
  if (records.size() > std::numeric_limits<std::uint32_t>::max()) throw InputError("lsh build: too many records");
  LshIndex index;
  index.cfg_ = cfg;
  index.records_ = std::move(records);
  const auto d = static_cast<std::size_t>(index.records_.dim());
  const auto bits = static_cast<std::size_t>(cfg.hash_bits);

  std::mt19937_64 rng(cfg.rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  index.tables_.resize(static_cast<std::size_t>(cfg.n_tables));
  for (Table& t : index.tables_) {
    t.planes.resize(bits * d);
    for (float& v : t.planes) v = static_cast<float>(gauss(rng));
  }

  const std::size_t n = index.records_.size();
  parallel_for(index.tables_.size(), [&](std::size_t ti) {
    Table& t = index.tables_[ti];
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs(n);
    for (std::size_t i = 0; i < n; ++i)
      pairs[i] = {index.code(static_cast<int>(ti), index.records_.embedding(i)), static_cast<std::uint32_t>(i)};
    std::sort(pairs.begin(), pairs.end());
    t.codes.resize(n);
    t.ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) std::tie(t.codes[i], t.ids[i]) = pairs[i];
  });
  return index;
}

void LshIndex::margins(int table, std::span<const float> v, std::span<double> out) const {
  const Table& t = tables_.at(static_cast<std::size_t>(table));
  const auto d = static_cast<std::size_t>(records_.dim());
  if (v.size() != d) throw InputError("lsh: dimension mismatch");
  for (std::size_t b = 0; b < out.size(); ++b) {
    const float* p = t.planes.data() + b * d;
    double lane[4] = {};
    const std::size_t body = d - d % 4;
    for (std::size_t j = 0; j < body; j += 4)
      for (std::size_t l = 0; l < 4; ++l) lane[l] += static_cast<double>(p[j + l]) * v[j + l];
    for (std::size_t j = body; j < d; ++j) lane[j - body] += static_cast<double>(p[j]) * v[j];
    out[b] = (lane[0] + lane[1]) + (lane[2] + lane[3]);
  }
}

std::uint32_t LshIndex::code(int table, std::span<const float> v) const {
  std::vector<double> m(static_cast<std::size_t>(cfg_.hash_bits));
  margins(table, v, m);
  std::uint32_t c = 0;
  for (std::size_t b = 0; b < m.size(); ++b)
    if (m[b] >= 0.0) c |= 1u << b;
  return c;
}

std::span<const float> LshIndex::hyperplanes(int table) const {
  return tables_.at(static_cast<std::size_t>(table)).planes;
}

std::span<const std::uint32_t> LshIndex::bucket(int table, std::uint32_t c) const {
  const Table& t = tables_.at(static_cast<std::size_t>(table));
  const auto [lo, hi] = std::equal_range(t.codes.begin(), t.codes.end(), c);
  return std::span<const std::uint32_t>(t.ids).subspan(static_cast<std::size_t>(lo - t.codes.begin()),
                                                       static_cast<std::size_t>(hi - lo));
}

std::vector<std::uint32_t> LshIndex::candidates(std::span<const float> q, int n_probes) const {
  check_query(records_, q, 1);
  const int bits = cfg_.hash_bits;
  const int tables = cfg_.n_tables;
  std::vector<std::uint32_t> base(static_cast<std::size_t>(tables));
  // order[t][j]: bit with the j-th smallest |margin|; cost[t][j] its squared margin.
  std::vector<std::vector<int>> order(static_cast<std::size_t>(tables));
  std::vector<std::vector<double>> cost(static_cast<std::size_t>(tables));
  std::vector<double> m(static_cast<std::size_t>(bits));
  for (int t = 0; t < tables; ++t) {
    margins(t, q, m);
    std::uint32_t c = 0;
    for (int b = 0; b < bits; ++b)
      if (m[b] >= 0.0) c |= 1u << b;
    base[t] = c;
    auto& o = order[t];
    o.resize(static_cast<std::size_t>(bits));
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](int a, int b) { return std::abs(m[a]) < std::abs(m[b]); });
    auto& z = cost[t];
    z.resize(static_cast<std::size_t>(bits));
    for (int j = 0; j < bits; ++j) z[j] = m[o[j]] * m[o[j]];
  }

  std::vector<std::uint32_t> found;
  const auto visit = [&](int t, std::uint32_t c) {
    const auto ids = bucket(t, c);
    found.insert(found.end(), ids.begin(), ids.end());
  };
  int budget = n_probes;
  for (int t = 0; t < tables && budget > 0; ++t, --budget) visit(t, base[t]);

  // Perturbation sets over margin-sorted positions, generated in increasing
  // score order by shift/expand from {0}; each set appears exactly once.
  using Entry = std::tuple<double, int, std::uint32_t>;  // score, table, set mask
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  for (int t = 0; t < tables; ++t) heap.emplace(cost[t][0], t, 1u);
  while (budget > 0 && !heap.empty()) {
    const auto [score, t, mask] = heap.top();
    heap.pop();
    std::uint32_t c = base[t];
    for (int j = 0; j < bits; ++j)
      if (mask & (1u << j)) c ^= 1u << order[t][j];
    visit(t, c);
    --budget;
    const int top = 31 - std::countl_zero(mask);
    if (top + 1 < bits) {
      const std::uint32_t next = 1u << (top + 1);
      heap.emplace(score - cost[t][top] + cost[t][top + 1], t, (mask ^ (1u << top)) | next);
      heap.emplace(score + cost[t][top + 1], t, mask | next);
    }
  }
  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());
  return found;
}

std::vector<Match> LshIndex::query(std::span<const float> q, int k) const { return query(q, k, cfg_.n_probes); }

std::vector<Match> LshIndex::query(std::span<const float> q, int k, int n_probes) const {
  check_query(records_, q, k);
  const auto ids = candidates(q, n_probes);
  std::vector<Match> all(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::uint32_t r = ids[i];
    all[i] = {r, records_.track(r), records_.segment(r), kernels::dot(records_.embedding(r), q)};
  }
  return top_k(std::move(all), k);
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr std::uint16_t kDbVersion = 1;
}

std::uintmax_t database_file_size(std::size_t count, int dim) {
  // 16-byte header + records + 4-byte CRC32 trailer.
  return 16u + static_cast<std::uintmax_t>(count) * (8u + 4u * static_cast<std::uintmax_t>(dim)) + 4u;
}

void save_database(const std::filesystem::path& path, const RecordStore& records) {
  if (records.dim() <= 0 || records.dim() > 65535) throw InputError("database: invalid dimension");
  detail::BinaryWriter w;
  w.tag("AFPD");
  w.put<std::uint16_t>(kDbVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(records.dim()));
  w.put<std::uint64_t>(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    w.put<std::uint32_t>(records.track(i));
    w.put<std::uint32_t>(records.segment(i));
    w.floats(records.embedding(i));
  }
  w.commit(path);
}

RecordStore load_database(const std::filesystem::path& path) {
  detail::BinaryReader r(path, "database");
  r.expect_magic("AFPD");
  if (const auto version = r.get<std::uint16_t>(); version != kDbVersion)
    r.fail("unsupported version " + std::to_string(version));
  const int dim = r.get<std::uint16_t>();
  const auto count = r.get<std::uint64_t>();
  if (dim == 0) r.fail("zero dimension");
  if (count > r.remaining() / (8u + 4u * static_cast<std::size_t>(dim))) r.fail("truncated payload");
  RecordStore store(dim);
  std::vector<float> e(static_cast<std::size_t>(dim));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto track = r.get<std::uint32_t>();
    const auto segment = r.get<std::uint32_t>();
    r.floats(e);
    store.add(track, segment, e);
  }
  r.expect_end();
  return store;
}

void save_track_names(const std::filesystem::path& path, const TrackNames& names) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  for (const auto& [id, name] : names) {
    if (name.find_first_of("\t\r\n") != std::string::npos)
      throw InputError("track name contains a tab or newline: " + name);
    out << id << '\t' << name << '\n';
  }
}

TrackNames load_track_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open track names: " + path.string());
  TrackNames names;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected track_id<TAB>name");
    try {
      std::size_t used = 0;
      const unsigned long id = std::stoul(line.substr(0, tab), &used);
      if (used != tab || id > std::numeric_limits<TrackId>::max()) throw std::invalid_argument("range");
      names[static_cast<TrackId>(id)] = line.substr(tab + 1);
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad track id");
    }
  }
  return names;
}

}  // namespace afp
