#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace ews {

// 64-bit FNV-1a over raw bytes; the artifact's content-fingerprint hash.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

// FNV-1a over a whole file's bytes. Throws on unreadable files.
std::uint64_t file_hash(const std::string& path);

}  // namespace ews
