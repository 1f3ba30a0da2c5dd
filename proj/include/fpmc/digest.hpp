#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "fpmc/types.hpp"

namespace fpmc {

/// Lowercase hex SHA-256.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::filesystem::path& path);
/// Digest of a batch as little-endian float64 values, row-major.
std::string sha256_batch(const Batch& batch);

}  // namespace fpmc
