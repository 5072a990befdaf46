#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace xinc {

/// 64-bit FNV-1a, streaming.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes);
  void update(std::string_view text);
  template <typename T>
  void update_values(std::span<const T> values) {
    update(std::as_bytes(values));
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t value);
std::string hash_text(std::string_view text);

}  // namespace xinc
