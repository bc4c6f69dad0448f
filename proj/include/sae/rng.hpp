#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sae {

using Engine = std::mt19937_64;

/// splitmix64 finalizer; used to derive decorrelated stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Identifies an independent random stream. Streams form a tree: every
/// child key is a deterministic function of the parent and a tag, so work
/// can be split across threads without changing any draw.
class StreamKey {
 public:
  constexpr explicit StreamKey(std::uint64_t seed = 0) noexcept : value_(mix64(seed)) {}

  [[nodiscard]] constexpr StreamKey child(std::uint64_t tag) const noexcept {
    StreamKey k;
    k.value_ = mix64(value_ ^ mix64(tag + 0x632be59bd9b4e019ULL));
    return k;
  }
  [[nodiscard]] constexpr StreamKey child(std::string_view tag) const noexcept {
    return child(fnv1a(tag));
  }

  [[nodiscard]] Engine engine() const { return Engine(value_); }
  [[nodiscard]] constexpr std::uint64_t value() const noexcept { return value_; }

 private:
  std::uint64_t value_;
};

}  // namespace sae
