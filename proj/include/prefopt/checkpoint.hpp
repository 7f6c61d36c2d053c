#pragma once

#include <filesystem>

#include "prefopt/tinylm.hpp"

namespace prefopt {

// Flat binary container: a little-endian u64 header length, a JSON header
// (config, seed, tensor name/shape/offset table), then all tensor payloads
// as little-endian 64-bit floats in row-major order.
void save_checkpoint(const std::filesystem::path& path, const TinyLMParams& params);
TinyLMParams load_checkpoint(const std::filesystem::path& path);

}  // namespace prefopt
