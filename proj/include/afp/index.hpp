#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "afp/audio.hpp"

namespace afp {

struct FingerprintRecord {
  TrackId track_id = 0;
  std::uint32_t segment_index = 0;
  std::vector<float> embedding;
};

/// Column store of fingerprint records with a contiguous embedding matrix.
class RecordStore {
 public:
  explicit RecordStore(int dim = 0) : dim_(dim) {}

  void add(TrackId track, std::uint32_t segment, std::span<const float> embedding);
  void add(const FingerprintRecord& r) { add(r.track_id, r.segment_index, r.embedding); }

  int dim() const { return dim_; }
  std::size_t size() const { return tracks_.size(); }
  bool empty() const { return tracks_.empty(); }
  TrackId track(std::size_t i) const { return tracks_[i]; }
  std::uint32_t segment(std::size_t i) const { return segments_[i]; }
  std::span<const float> embedding(std::size_t i) const {
    return std::span<const float>(data_).subspan(i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_));
  }
  std::span<const float> matrix() const { return data_; }
  FingerprintRecord record(std::size_t i) const;

  bool operator==(const RecordStore&) const = default;

 private:
  int dim_;
  std::vector<TrackId> tracks_;
  std::vector<std::uint32_t> segments_;
  std::vector<float> data_;
};

struct LshConfig {
  int n_tables = 50;
  int hash_bits = 18;
  int n_probes = 200;  // total bucket visits across all tables
  int top_k = 5;
  std::uint64_t rng_seed = 0;

  void validate() const;
  bool operator==(const LshConfig&) const = default;
};

struct Match {
  std::uint32_t record = 0;
  TrackId track_id = 0;
  std::uint32_t segment_index = 0;
  float similarity = 0.0f;
};

/// Sign-random-projection LSH over unit vectors with margin-ordered multi-probe.
/// Immutable after build; concurrent queries need no synchronization.
class LshIndex {
 public:
  /// Throws InputError on an empty store, ConfigError on a bad config.
  static LshIndex build(RecordStore records, const LshConfig& cfg);

  /// Top-k by exact similarity among candidates from cfg.n_probes buckets.
  std::vector<Match> query(std::span<const float> q, int k) const;
  std::vector<Match> query(std::span<const float> q, int k, int n_probes) const;
  /// Deduplicated candidate record ids (ascending) for a probe budget.
  std::vector<std::uint32_t> candidates(std::span<const float> q, int n_probes) const;

  std::uint32_t code(int table, std::span<const float> v) const;
  /// hash_bits x d row-major hyperplanes of one table.
  std::span<const float> hyperplanes(int table) const;
  /// Record ids stored under `code` in `table`.
  std::span<const std::uint32_t> bucket(int table, std::uint32_t code) const;

  const RecordStore& records() const { return records_; }
  const LshConfig& config() const { return cfg_; }

 private:
  struct Table {
    std::vector<float> planes;          // bits x d
    std::vector<std::uint32_t> codes;   // sorted
    std::vector<std::uint32_t> ids;     // aligned with codes
  };
  void margins(int table, std::span<const float> v, std::span<double> out) const;

  RecordStore records_;
  LshConfig cfg_;
  std::vector<Table> tables_;
};

/// Exact scan; ties on similarity break by (track_id, segment_index) ascending.
std::vector<Match> brute_force_query(const RecordStore& records, std::span<const float> q, int k);

/// Database file: "AFPD", u16 version, u16 d, u64 count, then per record
/// (u32 track, u32 segment, d x f32), little-endian, closed by a CRC32.
void save_database(const std::filesystem::path& path, const RecordStore& records);
RecordStore load_database(const std::filesystem::path& path);
/// Exact size of a database file.
std::uintmax_t database_file_size(std::size_t count, int dim);

/// UTF-8 TSV sidecar: track_id \t name.
using TrackNames = std::map<TrackId, std::string>;
void save_track_names(const std::filesystem::path& path, const TrackNames& names);
TrackNames load_track_names(const std::filesystem::path& path);

}  // namespace afp
