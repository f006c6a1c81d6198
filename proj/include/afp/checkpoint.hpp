#pragma once

#include <filesystem>

#include "afp/encoder.hpp"

namespace afp {

/// Binary checkpoint: "AFPC", u16 version, architecture, then every tensor as
/// (name, element count, float32 data), closed by a CRC32 of all prior bytes.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams<float>& params);

/// Throws FormatError on bad magic/version/checksum or a tensor whose name or
/// size disagrees with the stored architecture.
EncoderParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace afp
