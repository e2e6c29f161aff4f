// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include "wmaudit/tokens.hpp"

namespace wmaudit {

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

/// SplitMix64 finalizer applied to (z + golden gamma). Every keyed decision in
/// the toolkit (green lists, AAR draws, n-gram buckets, seed streams) goes
/// through this mix so results are reproducible from any language.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += kGoldenGamma;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds a token window into a 64-bit seed: h = mix(seed); h = mix(h ^ id).
constexpr std::uint64_t hash_ids(std::uint64_t seed, std::span<const TokenId> ids) noexcept {
  std::uint64_t h = mix64(seed);
  for (TokenId id : ids) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(id)));
  return h;
}

/// Maps 64 random bits to the open interval (0, 1).
constexpr double to_unit_open(std::uint64_t x) noexcept {
  return (static_cast<double>(x >> 12) + 0.5) * 0x1.0p-52;
}

__extension__ using uint128 = unsigned __int128;

/// Unbiased-enough integer in [0, n) by multiply-high (Lemire).
constexpr std::uint64_t bounded(std::uint64_t x, std::uint64_t n) noexcept {
  return static_cast<std::uint64_t>((static_cast<uint128>(x) * n) >> 64);
}

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t state) noexcept : state_(state) {}
  constexpr std::uint64_t next() noexcept {
    const std::uint64_t z = state_;
    state_ += kGoldenGamma;
    return mix64(z);
  }

 private:
  std::uint64_t state_;
};

constexpr std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Named sub-stream of a root seed, e.g. derive_seed(root, "ref-wm", j).
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(root ^ hash_label(label)) ^ mix64(index));
}

/// Seeded engine with platform-independent real conversions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }
  double uniform() { return to_unit_open(engine_()); }
  std::uint64_t below(std::uint64_t n) { return bounded(engine_(), n); }
  bool bernoulli(double p) { return uniform() < p; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace wmaudit
