#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "afp/augment.hpp"
#include "afp/encoder.hpp"
#include "afp/frontend.hpp"
#include "afp/index.hpp"
#include "afp/trainer.hpp"

namespace afp {

/// Every tunable of the engine in one document. A default-constructed config
/// carries the published full-scale settings (full-width encoder, N = 512,
/// 150 epochs with a 40-epoch ramp); toy() is the desk-scale preset.
struct EngineConfig {
  FrontendConfig frontend;
  AugmentConfig augment;
  EncoderArch encoder;
  TrainConfig train = full_scale_training();
  LshConfig lsh;

  static TrainConfig full_scale_training();
  /// Width 1/8, N = 64, 30 epochs, 8-epoch ramp.
  static EngineConfig toy();

  double width() const { return encoder.base_channels / 32.0; }
  /// Sets the seed of every randomized stage.
  void set_seed(std::uint64_t seed);

  /// Per-section checks plus cross-field consistency. Throws ConfigError.
  void validate() const;

  bool operator==(const EngineConfig&) const = default;
};

/// JSON text with sections frontend, augment, encoder, train, lsh. Keys not
/// present keep the value from `base`; unknown keys and type mismatches throw
/// ConfigError. The result is validated.
EngineConfig parse_config(std::string_view json_text, const EngineConfig& base = {});
EngineConfig load_config(const std::filesystem::path& path, const EngineConfig& base = {});

/// Complete document (every key) that parses back to an equal config.
std::string dump_config(const EngineConfig& cfg);
void save_config(const std::filesystem::path& path, const EngineConfig& cfg);

/// Frontend and LSH sections only, as stored next to a database.
std::string dump_index_config(const FrontendConfig& frontend, const LshConfig& lsh);
std::pair<FrontendConfig, LshConfig> parse_index_config(std::string_view json_text);

}  // namespace afp
