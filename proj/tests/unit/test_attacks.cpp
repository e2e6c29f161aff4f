// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "catch_amalgamated.hpp"
#include "wmaudit/attacks.hpp"

using namespace wmaudit;

namespace {

std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
  return t;
}

MarkovModel provider_model() {
  TeacherConfig t;
  t.sequences = 150;
  t.length = 200;
  return train_markov(synthetic_corpus(t, 21), 2, 0.1);
}

}  // namespace

TEST_CASE("word_delete") {
  const auto t = random_tokens(1000, 64, 1);
  Rng r0(1);
  CHECK(word_delete(t, 0.0, r0) == t);
  Rng r1(1);
  const auto all = word_delete(t, 1.0, r1);
  REQUIRE(all.size() == 1);
  CHECK(all[0] == t[0]);
  Rng r2(2);
  const auto kept = word_delete(t, 0.3, r2);
  CHECK(std::abs(static_cast<double>(kept.size()) - 700.0) <= 3.0 * std::sqrt(1000 * 0.21));
}

TEST_CASE("word_substitute") {
  const auto t = random_tokens(100, 16, 3);
  const std::vector<double> unigram(16, 1.0 / 16);
  Rng r0(1);
  CHECK(word_substitute(t, 0.0, unigram, r0) == t);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto out = word_substitute(t, 0.5, unigram, rng);
    REQUIRE(out.size() == t.size());
    std::size_t changed = 0;
    for (std::size_t i = 0; i < t.size(); ++i) changed += out[i] != t[i];
    CHECK(changed == 50);
    CHECK(in_vocab(out, 16));
  }
  const std::vector<double> one{1.0};
  const std::vector<TokenId> zeros(5, 0);
  Rng rng(0);
  CHECK_THROWS_AS(word_substitute(zeros, 0.5, one, rng), std::invalid_argument);
}

TEST_CASE("regenerate_windows") {
  const auto model = provider_model();
  const auto t = random_tokens(100, 64, 4);
  Rng r0(0);
  CHECK(regenerate_windows(t, model, 10, 0.0, r0) == t);
  Rng r1(0);
  const auto full = regenerate_windows(t, model, 100, 1.0, r1);
  CHECK(full.size() == t.size());
  CHECK(full != t);
  Rng r2(5);
  const auto half = regenerate_windows(t, model, 10, 0.5, r2);
  CHECK(half.size() == t.size());
  std::size_t untouched_windows = 0;
  for (std::size_t w = 0; w < 10; ++w)
    untouched_windows += std::equal(t.begin() + static_cast<long>(w * 10), t.begin() + static_cast<long>(w * 10 + 10),
                                    half.begin() + static_cast<long>(w * 10));
  CHECK(untouched_windows >= 5);
  CHECK(in_vocab(half, 64));
}

TEST_CASE("attacks are deterministic and validated") {
  const auto model = provider_model();
  const auto t = random_tokens(200, 64, 6);
  for (const AttackConfig& a : {AttackConfig{DeleteAttack{0.3}, 1}, AttackConfig{SubstituteAttack{0.5}, 1},
                                AttackConfig{RegenerateAttack{10, 0.5}, 1}}) {
    CHECK(apply_attack(a, t, model, 7) == apply_attack(a, t, model, 7));
    CHECK(in_vocab(apply_attack(a, t, model, 7), 64));
    CHECK(attack_from_json(attack_to_json(a)).name() == a.name());
  }
  CHECK_THROWS_AS((AttackConfig{DeleteAttack{1.5}, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((AttackConfig{RegenerateAttack{0, 0.5}, 0}.validate()), std::invalid_argument);
}

TEST_CASE("attacks dilute the keyed z-score") {
  const auto model = provider_model();
  KgwScheme kgw;
  kgw.delta = 4.0;
  for (const AttackConfig& a : {AttackConfig{DeleteAttack{0.5}, 2}, AttackConfig{SubstituteAttack{0.5}, 2},
                                AttackConfig{RegenerateAttack{10, 0.5}, 2}}) {
    double before = 0.0, after = 0.0;
    for (std::uint64_t i = 0; i < 100; ++i) {
      const std::vector<TokenId> prompt{static_cast<TokenId>(i % 64)};
      const auto rec = generate(model, prompt, 200, kgw, true, derive_seed(8, "q", i));
      before += keyed_zscore(rec.completion.ids, kgw, 64);
      after += keyed_zscore(apply_attack(a, rec.completion.ids, model, i), kgw, 64);
    }
    CHECK(after < before);
  }
}
