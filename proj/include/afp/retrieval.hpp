#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "afp/encoder.hpp"
#include "afp/frontend.hpp"
#include "afp/index.hpp"

namespace afp {

struct QueryFingerprint {
  std::vector<std::vector<float>> subs;  // temporal order, one per hop
  double hop_s = 0.1;
};

/// Segments the query at hop H (resampling if needed, no energy gate) and
/// embeds each segment. Throws InputError if shorter than L.
QueryFingerprint fingerprint_query(const Waveform& query, const EncoderParams<float>& params,
                                   const FrontendConfig& cfg);

/// Embeds every segment of a reference track at hop H, appending records with
/// segment_index k (timestamp k*H). With cfg.gate_on_ingest, segments failing
/// the energy gate against the track's mean power are skipped.
/// Returns the number of records added.
std::size_t fingerprint_track(RecordStore& store, const Waveform& track, TrackId id,
                              const EncoderParams<float>& params, const FrontendConfig& cfg);

struct Candidate {
  TrackId track_id = 0;
  std::uint32_t segment_index = 0;
  float similarity = 0.0f;
};

/// Per query position m, candidates sorted by similarity descending.
using MatchList = std::vector<std::vector<Candidate>>;

MatchList lookup(const LshIndex& index, const QueryFingerprint& query, int k);

struct Identification {
  TrackId track_id = 0;
  int votes = 0;
  double summed_similarity = 0.0;
};

/// Majority vote over rank-1 candidates; ties go to the larger summed rank-1
/// similarity, then the smaller track id. Throws InputError when no position
/// has a candidate.
Identification identify(const MatchList& matches);

struct RetrievalResult {
  TrackId track_id = 0;
  std::uint32_t start_segment = 0;
  double timestamp = 0.0;  // start_segment * H
  int vote_count = 0;
  double consistency = 0.0;
};

/// Candidate-sequence intersection with 0-based m: start I = I_m - m for every
/// candidate on the track with I_m >= m; consistency(I) is the fraction of
/// positions m with some candidate at segment I + m. Accepts the best start at
/// consistency >= 0.5 (ties: larger summed similarity, then smaller I).
/// Throws LocalizationError otherwise.
RetrievalResult localize(const MatchList& matches, TrackId track_id, double hop_s);

struct QueryAnswer {
  Identification identified;
  std::optional<RetrievalResult> located;  // empty when localization failed
};

QueryAnswer answer(const MatchList& matches, double hop_s);

enum class EvalLevel { kSegment, kAudio };

/// Segment level requires the right track and |timestamp - truth| <= tolerance.
bool is_hit(const QueryAnswer& a, TrackId true_track, double true_start, EvalLevel level,
            double tolerance_s = 0.05);

struct EvalQuery {
  Waveform audio;
  TrackId track_id = 0;
  double true_start = 0.0;
  std::string condition;
};

struct EvalRow {
  std::string condition;
  double query_seconds = 0.0;
  int hits = 0;
  int misses = 0;
  int wrong_track = 0;
  int localization_failed = 0;
  double accuracy() const { return hits + misses == 0 ? 0.0 : 100.0 * hits / (hits + misses); }
};

struct EvalReport {
  EvalLevel level = EvalLevel::kSegment;
  std::vector<EvalRow> rows;  // sorted by (condition, query length)
  EvalRow overall;
};

/// Runs every query through fingerprint -> lookup -> answer. Throws InputError
/// on an empty query set.
EvalReport evaluate(std::span<const EvalQuery> queries, const LshIndex& index,
                    const EncoderParams<float>& params, const FrontendConfig& cfg, EvalLevel level,
                    int k);

void write_report_csv(std::ostream& out, const EvalReport& report);

}  // namespace afp
