#include "afp/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <tuple>

#include "afp/error.hpp"
#include "afp/parallel.hpp"

namespace afp {

QueryFingerprint fingerprint_query(const Waveform& query, const EncoderParams<float>& params,
                                   const FrontendConfig& cfg) {
  const Waveform w = query.sample_rate == cfg.sample_rate ? query : resample(query, cfg.sample_rate);
  const auto segments = segment_stream(w, cfg);
  const LogMelExtractor extractor(cfg);
  std::vector<LogMelSpec> specs(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) specs[i] = extractor.compute(segments[i].samples);
  return {encode_batch(specs, params), cfg.hop_seconds()};
}

std::size_t fingerprint_track(RecordStore& store, const Waveform& track, TrackId id,
                              const EncoderParams<float>& params, const FrontendConfig& cfg) {
  const Waveform w = track.sample_rate == cfg.sample_rate ? track : resample(track, cfg.sample_rate);
  const auto segments = segment_stream(w, cfg, id);
  const double reference = mean_power(w.samples);
  const LogMelExtractor extractor(cfg);
  std::vector<LogMelSpec> specs;
  std::vector<std::uint32_t> kept;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    if (cfg.gate_on_ingest &&
        !energy_gate(segments[k].samples, reference, cfg.energy_threshold_db))
      continue;
    specs.push_back(extractor.compute(segments[k].samples));
    kept.push_back(static_cast<std::uint32_t>(k));
  }
  const auto embeddings = encode_batch(specs, params);
  for (std::size_t i = 0; i < kept.size(); ++i) store.add(id, kept[i], embeddings[i]);
  return kept.size();
}

MatchList lookup(const LshIndex& index, const QueryFingerprint& query, int k) {
  MatchList out(query.subs.size());
  for (std::size_t m = 0; m < query.subs.size(); ++m)
    for (const Match& hit : index.query(query.subs[m], k))
      out[m].push_back({hit.track_id, hit.segment_index, hit.similarity});
  return out;
}

Identification identify(const MatchList& matches) {
  std::map<TrackId, Identification> tally;
  for (const auto& cands : matches) {
    if (cands.empty()) continue;
    const Candidate& top = cands.front();
    Identification& id = tally[top.track_id];
    id.track_id = top.track_id;
    ++id.votes;
    id.summed_similarity += top.similarity;
  }
  if (tally.empty()) throw InputError("identify: empty match list");
  // std::map iterates ids ascending, so strict comparisons keep the smaller id on full ties.
  const Identification* best = nullptr;
  for (const auto& [id, t] : tally)
    if (!best || t.votes > best->votes ||
        (t.votes == best->votes && t.summed_similarity > best->summed_similarity))
      best = &t;
  return *best;
}

RetrievalResult localize(const MatchList& matches, TrackId track_id, double hop_s) {
  const auto M = matches.size();
  if (M == 0) throw InputError("localize: empty match list");
  // start I -> best similarity at each position m with a candidate at I + m
  std::map<std::uint32_t, std::vector<float>> best;
  for (std::size_t m = 0; m < M; ++m)
    for (const Candidate& c : matches[m]) {
      if (c.track_id != track_id || c.segment_index < m) continue;
      const auto start = static_cast<std::uint32_t>(c.segment_index - m);
      auto& row = best.try_emplace(start, std::vector<float>(M, -INFINITY)).first->second;
      row[m] = std::max(row[m], c.similarity);
    }

  int votes = 0;
  for (const auto& cands : matches)
    if (!cands.empty() && cands.front().track_id == track_id) ++votes;

  bool found = false;
  RetrievalResult result;
  double best_support = -1.0, best_sim = -INFINITY;
  for (const auto& [start, row] : best) {
    std::size_t count = 0;
    double sim = 0.0;
    for (float s : row)
      if (s != -INFINITY) {
        ++count;
        sim += s;
      }
    const double ratio = static_cast<double>(count) / static_cast<double>(M);
    // Starts iterate ascending, so strict comparisons keep the smaller start on full ties.
    if (ratio > best_support || (ratio == best_support && sim > best_sim)) {
      best_support = ratio;
      best_sim = sim;
      result = {track_id, start, start * hop_s, votes, ratio};
      found = true;
    }
  }
  if (!found || best_support < 0.5)
    throw LocalizationError("localization failed: best candidate sequence consistency " +
                            std::to_string(std::max(best_support, 0.0)) + " < 0.5");
  return result;
}

QueryAnswer answer(const MatchList& matches, double hop_s) {
  QueryAnswer a;
  a.identified = identify(matches);
  try {
    a.located = localize(matches, a.identified.track_id, hop_s);
  } catch (const LocalizationError&) {
    a.located.reset();
  }
  return a;
}

bool is_hit(const QueryAnswer& a, TrackId true_track, double true_start, EvalLevel level,
            double tolerance_s) {
  if (a.identified.track_id != true_track) return false;
  if (level == EvalLevel::kAudio) return true;
  // Small slack absorbs the binary rounding of I*H.
  return a.located && std::abs(a.located->timestamp - true_start) <= tolerance_s + 1e-9;
}

EvalReport evaluate(std::span<const EvalQuery> queries, const LshIndex& index,
                    const EncoderParams<float>& params, const FrontendConfig& cfg, EvalLevel level,
                    int k) {
  if (queries.empty()) throw InputError("evaluate: empty query set");
  std::vector<QueryAnswer> answers(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) {
    const auto fp = fingerprint_query(queries[i].audio, params, cfg);
    answers[i] = answer(lookup(index, fp, k), fp.hop_s);
  });

  EvalReport report;
  report.level = level;
  report.overall.condition = "all";
  std::map<std::pair<std::string, long long>, EvalRow> rows;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const EvalQuery& q = queries[i];
    const double seconds = q.audio.duration();
    const long long tenths = std::llround(seconds * 10.0);
    EvalRow& row = rows[{q.condition, tenths}];
    row.condition = q.condition;
    row.query_seconds = static_cast<double>(tenths) / 10.0;
    const QueryAnswer& a = answers[i];
    const bool hit = is_hit(a, q.track_id, q.true_start, level);
    for (EvalRow* r : {&row, &report.overall}) {
      if (hit) {
        ++r->hits;
        continue;
      }
      ++r->misses;
      if (a.identified.track_id != q.track_id)
        ++r->wrong_track;
      else if (!a.located)
        ++r->localization_failed;
    }
  }
  for (auto& [key, row] : rows) report.rows.push_back(row);
  return report;
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "level,condition,query_seconds,hits,misses,wrong_track,localization_failed,accuracy\n";
  const char* level = report.level == EvalLevel::kSegment ? "segment" : "audio";
  const auto line = [&](const EvalRow& r, const std::string& seconds) {
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.2f", r.accuracy());
    out << level << ',' << r.condition << ',' << seconds << ',' << r.hits << ',' << r.misses << ','
        << r.wrong_track << ',' << r.localization_failed << ',' << acc << '\n';
  };
  for (const EvalRow& r : report.rows) {
    char s[32];
    std::snprintf(s, sizeof s, "%.1f", r.query_seconds);
    line(r, s);
  }
  line(report.overall, "all");
}

}  // namespace afp
