#include "afp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "afp/error.hpp"
#include "json.hpp"

namespace afp {

using nlohmann::json;

namespace {

template <class F>
void fields(FrontendConfig& c, F&& f) {
  f("sample_rate", c.sample_rate);
  f("segment_ms", c.segment_ms);
  f("hop_ms", c.hop_ms);
  f("energy_threshold_db", c.energy_threshold_db);
  f("n_mels", c.n_mels);
  f("n_frames", c.n_frames);
  f("fft_size", c.fft_size);
  f("frame_hop", c.frame_hop);
  f("mel_fmin", c.mel_fmin);
  f("mel_fmax", c.mel_fmax);
  f("log_floor", c.log_floor);
  f("gate_on_ingest", c.gate_on_ingest);
}

template <class F>
void fields(AugmentConfig& c, F&& f) {
  f("max_offset_fraction", c.max_offset_fraction);
  f("snr_min_db", c.snr_min_db);
  f("snr_max_db", c.snr_max_db);
  f("time_masks", c.time_masks);
  f("freq_masks", c.freq_masks);
  f("mask_width_fraction", c.mask_width_fraction);
  f("enable_offset", c.enable_offset);
  f("enable_reverb", c.enable_reverb);
  f("enable_noise", c.enable_noise);
  f("enable_spec_augment", c.enable_spec_augment);
  f("p_offset", c.p_offset);
  f("p_reverb", c.p_reverb);
  f("p_noise", c.p_noise);
  f("p_spec_augment", c.p_spec_augment);
  f("rng_seed", c.rng_seed);
}

// base_channels is expressed through "width".
template <class F>
void fields(EncoderArch& c, F&& f) {
  f("n_mels", c.n_mels);
  f("n_frames", c.n_frames);
  f("down_blocks", c.down_blocks);
  f("embedding_dim", c.embedding_dim);
  f("head_hidden", c.head_hidden);
  f("attention_after", c.attention_after);
  f("attention_scale", c.attention_scale);
  f("bn_eps", c.bn_eps);
  f("bn_momentum", c.bn_momentum);
}

template <class F>
void fields(TrainConfig& c, F&& f) {
  f("batch_size", c.batch_size);
  f("temperature", c.temperature);
  f("epochs", c.epochs);
  f("lr_base", c.lr_base);
  f("lr_max", c.lr_max);
  f("ramp_epochs", c.ramp_epochs);
  f("adam_beta1", c.adam_beta1);
  f("adam_beta2", c.adam_beta2);
  f("adam_eps", c.adam_eps);
  f("segments_per_track", c.segments_per_track);
  f("rng_seed", c.rng_seed);
}

template <class F>
void fields(LshConfig& c, F&& f) {
  f("n_tables", c.n_tables);
  f("hash_bits", c.hash_bits);
  f("n_probes", c.n_probes);
  f("top_k", c.top_k);
  f("rng_seed", c.rng_seed);
}

template <class S>
json to_section(S s) {
  json j = json::object();
  fields(s, [&](const char* key, const auto& v) { j[key] = v; });
  return j;
}

template <class S>
void from_section(const json& doc, const std::string& name, S& s, std::set<std::string> extra = {}) {
  if (!doc.contains(name)) return;
  const json& j = doc.at(name);
  if (!j.is_object()) throw ConfigError("config: section '" + name + "' must be an object");
  std::set<std::string> known = std::move(extra);
  fields(s, [&](const char* key, auto& v) {
    known.insert(key);
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(v);
    } catch (const json::exception&) {
      throw ConfigError("config: " + name + "." + key + " has the wrong type");
    }
  });
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("config: unknown key " + name + "." + key);
}

json parse_json(std::string_view text) {
  try {
    json doc = json::parse(text);
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    return doc;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
}

void reject_unknown_sections(const json& doc, const std::set<std::string>& known) {
  for (const auto& [key, value] : doc.items())
    if (!known.contains(key)) throw ConfigError("config: unknown section '" + key + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path.string());
  out << text;
}

}  // namespace

TrainConfig EngineConfig::full_scale_training() {
  TrainConfig t;
  t.batch_size = 512;
  t.epochs = 150;
  t.ramp_epochs = 40.0;
  return t;
}

EngineConfig EngineConfig::toy() {
  EngineConfig c;
  c.encoder = EncoderArch::with_width(0.125);
  c.train = TrainConfig{};
  return c;
}

void EngineConfig::set_seed(std::uint64_t seed) {
  augment.rng_seed = seed;
  train.rng_seed = seed;
  lsh.rng_seed = seed;
}

void EngineConfig::validate() const {
  frontend.validate();
  augment.validate();
  encoder.validate();
  train.validate();
  lsh.validate();
  if (encoder.n_mels != frontend.n_mels || encoder.n_frames != frontend.n_frames)
    throw ConfigError("config: encoder input " + std::to_string(encoder.n_mels) + "x" +
                      std::to_string(encoder.n_frames) + " does not match the frontend spectrogram " +
                      std::to_string(frontend.n_mels) + "x" + std::to_string(frontend.n_frames));
  if (encoder.embedding_dim > 65535) throw ConfigError("config: embedding_dim exceeds the database limit");
}

EngineConfig parse_config(std::string_view json_text, const EngineConfig& base) {
  const json doc = parse_json(json_text);
  reject_unknown_sections(doc, {"frontend", "augment", "encoder", "train", "lsh"});
  EngineConfig c = base;
  from_section(doc, "frontend", c.frontend);
  from_section(doc, "augment", c.augment);
  from_section(doc, "encoder", c.encoder, {"width"});
  if (doc.contains("encoder") && doc.at("encoder").contains("width")) {
    const json& w = doc.at("encoder").at("width");
    if (!w.is_number()) throw ConfigError("config: encoder.width has the wrong type");
    c.encoder.base_channels = EncoderArch::with_width(w.get<double>()).base_channels;
  }
  from_section(doc, "train", c.train);
  from_section(doc, "lsh", c.lsh);
  c.validate();
  return c;
}

EngineConfig load_config(const std::filesystem::path& path, const EngineConfig& base) {
  return parse_config(read_text(path), base);
}

std::string dump_config(const EngineConfig& cfg) {
  json doc;
  doc["frontend"] = to_section(cfg.frontend);
  doc["augment"] = to_section(cfg.augment);
  doc["encoder"] = to_section(cfg.encoder);
  doc["encoder"]["width"] = cfg.width();
  doc["train"] = to_section(cfg.train);
  doc["lsh"] = to_section(cfg.lsh);
  return doc.dump(2) + "\n";
}

void save_config(const std::filesystem::path& path, const EngineConfig& cfg) {
  write_text(path, dump_config(cfg));
}

std::string dump_index_config(const FrontendConfig& frontend, const LshConfig& lsh) {
  json doc;
  doc["frontend"] = to_section(frontend);
  doc["lsh"] = to_section(lsh);
  return doc.dump(2) + "\n";
}

std::pair<FrontendConfig, LshConfig> parse_index_config(std::string_view json_text) {
  const json doc = parse_json(json_text);
  reject_unknown_sections(doc, {"frontend", "lsh"});
  std::pair<FrontendConfig, LshConfig> out;
  from_section(doc, "frontend", out.first);
  from_section(doc, "lsh", out.second);
  out.first.validate();
  out.second.validate();
  return out;
}

}  // namespace afp
