// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

// Token-level post-generation perturbations: random deletion, unigram
// substitution, and windowed regeneration as a paraphrase stand-in.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "wmaudit/prf.hpp"
#include "wmaudit/provider.hpp"

namespace wmaudit {

struct DeleteAttack {
  double ratio = 0.3;
};
struct SubstituteAttack {
  double ratio = 0.5;
};
struct RegenerateAttack {
  std::size_t window = 10;
  double ratio = 0.5;
};

struct AttackConfig {
  std::variant<DeleteAttack, SubstituteAttack, RegenerateAttack> kind;
  std::uint64_t seed = 0;

  double ratio() const;
  std::string name() const;
  /// Throws std::invalid_argument if ratio is outside [0,1] or window < 1.
  void validate() const;
};

nlohmann::json attack_to_json(const AttackConfig& attack);
AttackConfig attack_from_json(const nlohmann::json& j);

/// Drops each token independently with probability `ratio`; keeps the first
/// token if everything would be dropped.
std::vector<TokenId> word_delete(std::span<const TokenId> tokens, double ratio, Rng& rng);

/// Replaces floor(ratio * L) positions, chosen without replacement, with draws
/// from `unigram` conditioned on differing from the original token.
/// Throws std::invalid_argument for a vocabulary of size 1 or a distribution
/// with no mass outside the original token.
std::vector<TokenId> word_substitute(std::span<const TokenId> tokens, double ratio,
                                     std::span<const double> unigram, Rng& rng);

/// Rewrites floor(ratio * L / window) disjoint, window-aligned spans with
/// unwatermarked samples from `model`, each conditioned on everything before
/// it. Length is preserved.
std::vector<TokenId> regenerate_windows(std::span<const TokenId> tokens, const MarkovModel& model,
                                        std::size_t window, double ratio, Rng& rng);

/// Runs `attack` with its own seed mixed with `stream` (typically a per-query
/// seed). Substitution draws replacements from the model's unigram row.
std::vector<TokenId> apply_attack(const AttackConfig& attack, std::span<const TokenId> tokens,
                                  const MarkovModel& model, std::uint64_t stream);

}  // namespace wmaudit
