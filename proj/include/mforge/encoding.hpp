// encoding.hpp - hashing and base64 helpers shared across modules.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mforge {

/// 64-bit FNV-1a; stable across platforms, used to seed deterministic mocks.
constexpr std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 14695981039346656037ull) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

std::string base64_encode(std::string_view data);

/// Throws std::invalid_argument on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace mforge
