#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace cmcr {

/// Incremental 64-bit FNV-1a, used for content fingerprints.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes) noexcept;
  void update(std::string_view text) noexcept;
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

/// Fingerprint of a file's bytes; throws IoFailure when unreadable.
std::string file_fingerprint(const std::filesystem::path& path);

std::string to_hex(std::uint64_t value);

}  // namespace cmcr
