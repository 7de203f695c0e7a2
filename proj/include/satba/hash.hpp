#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace satba {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Lower-case hex SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

/// Seed for a named pipeline stage: first 8 bytes of SHA-256("<master>:<stage>").
std::uint64_t stage_seed(std::uint64_t master_seed, std::string_view stage);

}  // namespace satba
