// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include "wmaudit/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace wmaudit {

double AttackConfig::ratio() const {
  return std::visit([](const auto& a) { return a.ratio; }, kind);
}

std::string AttackConfig::name() const {
  switch (kind.index()) {
    case 0: return "delete";
    case 1: return "substitute";
    default: return "regenerate";
  }
}

void AttackConfig::validate() const {
  const double r = ratio();
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("attack.ratio must lie in [0,1]");
  if (const auto* regen = std::get_if<RegenerateAttack>(&kind); regen && regen->window < 1)
    throw std::invalid_argument("attack.window must be >= 1");
}

nlohmann::json attack_to_json(const AttackConfig& attack) {
  nlohmann::json j{{"type", attack.name()}, {"ratio", attack.ratio()}, {"seed", attack.seed}};
  if (const auto* regen = std::get_if<RegenerateAttack>(&attack.kind)) j["window"] = regen->window;
  return j;
}

AttackConfig attack_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("attack: expected an object");
  const std::string type = j.value("type", std::string());
  AttackConfig a;
  a.seed = j.value("seed", std::uint64_t{0});
  if (type == "delete") {
    a.kind = DeleteAttack{j.value("ratio", DeleteAttack{}.ratio)};
  } else if (type == "substitute") {
    a.kind = SubstituteAttack{j.value("ratio", SubstituteAttack{}.ratio)};
  } else if (type == "regenerate") {
    a.kind = RegenerateAttack{j.value("window", RegenerateAttack{}.window),
                              j.value("ratio", RegenerateAttack{}.ratio)};
  } else {
    throw std::invalid_argument("attack.type: unknown attack '" + type + "'");
  }
  a.validate();
  return a;
}

std::vector<TokenId> word_delete(std::span<const TokenId> tokens, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("word_delete: ratio must lie in [0,1]");
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (TokenId t : tokens)
    if (!rng.bernoulli(ratio)) out.push_back(t);
  if (out.empty() && !tokens.empty()) out.push_back(tokens.front());
  return out;
}

std::vector<TokenId> word_substitute(std::span<const TokenId> tokens, double ratio,
                                     std::span<const double> unigram, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("word_substitute: ratio must lie in [0,1]");
  if (unigram.size() < 2) throw std::invalid_argument("word_substitute: vocabulary of size 1 has no substitute");
  std::vector<TokenId> out(tokens.begin(), tokens.end());
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(tokens.size())));
  if (count == 0) return out;

  // Partial Fisher-Yates picks `count` distinct positions.
  std::vector<std::size_t> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(positions.size() - i));
    std::swap(positions[i], positions[j]);
  }
  const double total = std::accumulate(unigram.begin(), unigram.end(), 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t pos = positions[i];
    const auto original = static_cast<std::size_t>(out[pos]);
    if (original >= unigram.size()) throw std::invalid_argument("word_substitute: token outside vocabulary");
    const double mass = total - unigram[original];
    if (!(mass > 0.0)) throw std::invalid_argument("word_substitute: no substitute with positive mass");
    double u = rng.uniform() * mass;
    std::size_t pick = original == 0 ? 1 : 0;
    for (std::size_t v = 0; v < unigram.size(); ++v) {
      if (v == original || unigram[v] <= 0.0) continue;
      pick = v;
      u -= unigram[v];
      if (u < 0.0) break;
    }
    out[pos] = static_cast<TokenId>(pick);
  }
  return out;
}

std::vector<TokenId> regenerate_windows(std::span<const TokenId> tokens, const MarkovModel& model,
                                        std::size_t window, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw std::invalid_argument("regenerate_windows: ratio must lie in [0,1]");
  if (window < 1) throw std::invalid_argument("regenerate_windows: window must be >= 1");
  std::vector<TokenId> out(tokens.begin(), tokens.end());
  if (tokens.empty()) return out;
  if (window > tokens.size()) throw std::invalid_argument("regenerate_windows: window longer than text");

  const std::size_t slots = tokens.size() / window;
  const auto count = std::min(
      slots, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(tokens.size()) /
                                                  static_cast<double>(window))));
  if (count == 0) return out;
  std::vector<std::size_t> chosen(slots);
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(slots - i));
    std::swap(chosen[i], chosen[j]);
  }
  chosen.resize(count);
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t slot : chosen) {
    const std::size_t start = slot * window;
    const auto fresh = generate(model, std::span<const TokenId>(out).first(start), window, NoWatermark{},
                                false, rng.bits());
    std::copy(fresh.completion.ids.begin(), fresh.completion.ids.end(),
              out.begin() + static_cast<std::ptrdiff_t>(start));
  }
  return out;
}

std::vector<TokenId> apply_attack(const AttackConfig& attack, std::span<const TokenId> tokens,
                                  const MarkovModel& model, std::uint64_t stream) {
  attack.validate();
  Rng rng(derive_seed(attack.seed, "attack", stream));
  return std::visit(
      [&](const auto& a) -> std::vector<TokenId> {
        using A = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<A, DeleteAttack>) {
          return word_delete(tokens, a.ratio, rng);
        } else if constexpr (std::is_same_v<A, SubstituteAttack>) {
          const auto unigram = softmax(model.lookup({}));
          return word_substitute(tokens, a.ratio, unigram, rng);
        } else {
          return regenerate_windows(tokens, model, std::min(a.window, std::max<std::size_t>(tokens.size(), 1)),
                                    a.ratio, rng);
        }
      },
      attack.kind);
}

}  // namespace wmaudit
