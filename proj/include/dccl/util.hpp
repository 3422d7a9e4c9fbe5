#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>

namespace dccl {

/// Concatenate arbitrary streamable values into a string (message building).
template <class... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

/// FNV-1a 64-bit hash over a byte sequence.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

std::string to_hex(std::uint64_t v);

/// Shortest decimal form of a double that round-trips bit-exactly
/// (up to 17 significant digits).
std::string format_double(double v);

}  // namespace dccl
