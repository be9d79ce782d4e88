#pragma once

#include <filesystem>
#include <optional>

#include "divmix/gist.hpp"

namespace divmix::gist {

// Binary layout (little endian):
//   "GSTC" | u16 version | u64 params_hash | u32 rows | u32 dim
//   | rows x (u32 byte length, UTF-8 id) | rows*dim f32 | u32 CRC32(f32 block)
inline constexpr std::uint16_t kCacheVersion = 1;

void write_cache(const DescriptorSet& set, const std::filesystem::path& path);

enum class CacheStatus { ok, missing, corrupt, params_mismatch, ids_mismatch };

struct CacheRead {
  CacheStatus status = CacheStatus::missing;
  std::optional<DescriptorSet> set;
};

/// Reads and verifies a cache. `expected_ids`, when given, must match the
/// stored id list exactly.
CacheRead read_cache(const std::filesystem::path& path, std::uint64_t expected_hash,
                     const std::vector<std::string>* expected_ids = nullptr);

}  // namespace divmix::gist
