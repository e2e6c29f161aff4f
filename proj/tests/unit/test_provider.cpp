// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "catch_amalgamated.hpp"
#include "oracles/frozen_values.hpp"
#include "wmaudit/provider.hpp"

using namespace wmaudit;
using Catch::Approx;

namespace {

MarkovModel toy_bigram() {
  const std::vector<TokenSeq> corpus{TokenSeq{{0, 1, 0, 1}, 2}};
  return train_markov(corpus, 1, 1.0);
}

MarkovModel small_provider(std::uint64_t seed = 3) {
  TeacherConfig t;
  t.vocab_size = 64;
  t.order = 2;
  t.sequences = 200;
  t.length = 200;
  return train_markov(synthetic_corpus(t, seed), 2, 0.1);
}

double green_fraction(const std::vector<TokenId>& tokens, const KgwScheme& s, std::size_t vocab) {
  const auto c = count_green(tokens, s, vocab);
  return static_cast<double>(c.green) / static_cast<double>(c.scorable);
}

}  // namespace

TEST_CASE("bigram counts with add-one smoothing") {
  const auto model = toy_bigram();
  const std::vector<TokenId> ctx{0};
  const auto p = softmax(logits(model, ctx));
  CHECK(p[1] == Approx(0.75).epsilon(1e-12));
  CHECK(p[0] == Approx(0.25).epsilon(1e-12));
}

TEST_CASE("uniform usage gives equal unigram logits") {
  const std::vector<TokenSeq> corpus{TokenSeq{{0, 1, 2, 3}, 4}};
  const auto model = train_markov(corpus, 1, 0.5);
  const auto row = logits(model, {});
  for (double l : row) CHECK(l == Approx(row[0]));
}

TEST_CASE("unknown context backs off to the unigram row") {
  const std::vector<TokenSeq> corpus{TokenSeq{{0, 0, 0, 1}, 3}};
  const auto model = train_markov(corpus, 1, 1.0);
  const std::vector<TokenId> unseen{2};
  CHECK_FALSE(model.has_context(unseen));
  const auto a = logits(model, unseen);
  const auto b = logits(model, {});
  CHECK(a == b);
}

TEST_CASE("known context returns the stored row and softmax normalizes") {
  const auto model = small_provider();
  const std::vector<TokenId> ctx{5, 9};
  const auto row = logits(model, ctx);
  const auto stored = model.lookup(ctx);
  CHECK(std::equal(row.begin(), row.end(), stored.begin()));
  const auto p = softmax(row);
  CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-12);
}

TEST_CASE("train_markov rejects bad input") {
  CHECK_THROWS_AS(train_markov(std::vector<TokenSeq>{}, 1, 1.0), std::invalid_argument);
  const std::vector<TokenSeq> corpus{TokenSeq{{0, 1}, 2}};
  CHECK_THROWS_AS(train_markov(corpus, 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(train_markov(corpus, 1, 0.0), std::invalid_argument);
}

TEST_CASE("green list matches the Python oracle") {
  const std::vector<TokenId> ctx{3};
  const auto g = green_list(kDefaultSchemeKey, ctx, 0.5, 8);
  CHECK(g == std::vector<TokenId>(std::begin(oracle::kGreenKeyCtx3Gamma05V8), std::end(oracle::kGreenKeyCtx3Gamma05V8)));
  const auto g16 = green_list(kDefaultSchemeKey, ctx, 0.25, 16);
  CHECK(g16 == std::vector<TokenId>(std::begin(oracle::kGreenKeyCtx3Gamma025V16),
                                    std::end(oracle::kGreenKeyCtx3Gamma025V16)));
  const auto uni = green_list(kDefaultSchemeKey, {}, 0.5, 8);
  CHECK(uni == std::vector<TokenId>(std::begin(oracle::kGreenUnigramGamma05V8), std::end(oracle::kGreenUnigramGamma05V8)));
}

TEST_CASE("green list size and partition") {
  CHECK(green_list(1, {}, 0.5, 4).size() == 2);
  CHECK(green_list(1, {}, 0.01, 4).empty());
  for (std::uint64_t key = 0; key < 50; ++key) {
    const std::vector<TokenId> ctx{static_cast<TokenId>(key % 7)};
    const std::size_t v = 10 + key % 23;
    const double gamma = 0.1 + 0.8 * static_cast<double>(key % 9) / 8.0;
    const auto g = green_list(key, ctx, gamma, v);
    const auto mask = green_mask(key, ctx, gamma, v);
    CHECK(g.size() == static_cast<std::size_t>(std::lround(gamma * static_cast<double>(v))));
    CHECK(static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)) == g.size());
    for (TokenId t : g) CHECK(mask[static_cast<std::size_t>(t)] == 1);
  }
}

TEST_CASE("apply_kgw_bias") {
  const std::vector<double> zero(4, 0.0);
  const std::vector<TokenId> green{0, 1};
  CHECK(apply_kgw_bias(zero, green, 2.0) == std::vector<double>{2, 2, 0, 0});
  const std::vector<double> l{0.3, -1.0, 2.0, 0.5};
  CHECK(apply_kgw_bias(l, green, 0.0) == l);
  const auto biased = apply_kgw_bias(l, green, 1.5);
  const auto p = softmax(l);
  const auto q = softmax(biased);
  CHECK((q[0] / q[2]) / (p[0] / p[2]) == Approx(std::exp(1.5)).epsilon(1e-12));
  CHECK((q[0] / q[1]) / (p[0] / p[1]) == Approx(1.0).epsilon(1e-12));
  const std::vector<TokenId> bad{7};
  CHECK_THROWS_AS(apply_kgw_bias(l, bad, 1.0), std::out_of_range);
}

TEST_CASE("sample_token") {
  std::vector<double> l(8, 0.0);
  l[5] = 20.0;
  Rng rng(1);
  int hits = 0;
  for (int i = 0; i < 2000; ++i) hits += sample_token(l, 1.0, rng) == 5;
  CHECK(hits >= 1998);

  const std::vector<double> tie{1.0, 3.0, 3.0, 0.0};
  Rng r0(9);
  CHECK(sample_token(tie, 0.0, r0) == 1);

  Rng a(77), b(77);
  const std::vector<double> flat(16, 0.0);
  for (int i = 0; i < 50; ++i) CHECK(sample_token(flat, 1.0, a) == sample_token(flat, 1.0, b));
}

TEST_CASE("aar_sample") {
  const std::vector<double> degenerate{-1e9, 0.0, -1e9};
  for (std::uint64_t key = 0; key < 100; ++key) CHECK(aar_sample(degenerate, key, {}) == 1);
  const std::vector<double> l{0.1, 0.7, -0.4, 1.2};
  const std::vector<TokenId> ctx{2};
  CHECK(aar_sample(l, 5, ctx) == aar_sample(l, 5, ctx));
  const std::vector<TokenId> ctx5{5};
  for (TokenId t = 0; t < 4; ++t) CHECK(aar_uniform(kDefaultSchemeKey, ctx5, t) == oracle::kAarUniformCtx5[t]);
}

TEST_CASE("aar_sample is unbiased over keys") {
  const std::vector<double> l{0.2, -0.5, 1.0};
  const auto p = softmax(l);
  std::vector<double> freq(3, 0.0);
  const std::vector<TokenId> ctx{4};
  const int keys = 100000;
  for (int k = 0; k < keys; ++k) freq[static_cast<std::size_t>(aar_sample(l, mix64(k), ctx))] += 1.0 / keys;
  double tv = 0.0;
  for (std::size_t i = 0; i < 3; ++i) tv += 0.5 * std::abs(freq[i] - p[i]);
  CHECK(tv < 0.02);
}

TEST_CASE("generate: flag contract and determinism") {
  const auto model = small_provider();
  const std::vector<TokenId> prompt{1, 2, 3};
  const KgwScheme kgw;
  const auto off = generate(model, prompt, 100, kgw, false, 11);
  const auto none = generate(model, prompt, 100, NoWatermark{}, true, 11);
  CHECK(off.completion.ids == none.completion.ids);
  const auto again = generate(model, prompt, 100, kgw, true, 11);
  CHECK(again.completion.ids == generate(model, prompt, 100, kgw, true, 11).completion.ids);
  CHECK(again.prompt.ids == prompt);
  CHECK(again.completion.size() == 100);
  CHECK(in_vocab(again.completion.ids, 64));
}

TEST_CASE("generate: extreme KGW bias and null green fraction") {
  const auto model = small_provider();
  const std::vector<TokenId> prompt{4};
  KgwScheme strong;
  strong.delta = 10.0;
  const auto wm = generate(model, prompt, 200, strong, true, 0);
  CHECK(green_fraction(wm.completion.ids, strong, 64) > 0.95);
  const auto clean = generate(model, prompt, 200, NoWatermark{}, false, 0);
  CHECK(std::abs(green_fraction(clean.completion.ids, strong, 64) - 0.5) <= 3.0 * std::sqrt(0.25 / 200.0) + 1e-12);
}

TEST_CASE("generate: distinct seeds give distinct watermarked completions") {
  const auto model = small_provider();
  const std::vector<TokenId> prompt{4, 8};
  for (const SchemeConfig& s : {SchemeConfig{KgwScheme{}}, SchemeConfig{AarScheme{}}, SchemeConfig{UnigramScheme{}}}) {
    const auto a = generate(model, prompt, 200, s, true, 1);
    const auto b = generate(model, prompt, 200, s, true, 2);
    CHECK(a.completion.ids != b.completion.ids);
  }
}

TEST_CASE("monotone bias under shared randomness") {
  // One step at a time: the same Gumbel draws pick a green token at delta2
  // whenever they do at delta1 < delta2.
  const auto model = small_provider();
  const KgwScheme base;
  for (std::uint64_t trial = 0; trial < 300; ++trial) {
    const std::vector<TokenId> ctx{static_cast<TokenId>(trial % 64), static_cast<TokenId>((trial * 7) % 64)};
    const auto row = logits(model, ctx);
    const auto green = green_list(base.key, std::span<const TokenId>(ctx).last(1), base.gamma, 64);
    const auto mask = green_mask(base.key, std::span<const TokenId>(ctx).last(1), base.gamma, 64);
    bool was_green = false;
    for (double delta : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
      Rng rng(derive_seed(trial, "coupled"));
      const auto t = sample_token(apply_kgw_bias(row, green, delta), 1.0, rng);
      const bool is_green = mask[static_cast<std::size_t>(t)] == 1;
      CHECK((!was_green || is_green));
      was_green = is_green;
    }
  }
}

TEST_CASE("zscore formula") {
  CHECK(zscore({50, 100, 0.5}) == Approx(0.0).margin(1e-12));
  CHECK(zscore({70, 100, 0.5}) == Approx(4.0).epsilon(1e-12));
  CHECK(zscore({100, 100, 0.5}) == Approx(10.0).epsilon(1e-12));
}

TEST_CASE("keyed_zscore scorable positions and errors") {
  const KgwScheme kgw;
  const std::vector<TokenId> tokens{1, 2, 3, 4, 5};
  CHECK(count_green(tokens, kgw, 64).scorable == 4);
  CHECK(count_green(tokens, UnigramScheme{}, 64).scorable == 5);
  CHECK_THROWS_AS(keyed_zscore(tokens, AarScheme{}, 64), std::invalid_argument);
  CHECK_THROWS_AS(keyed_zscore(tokens, NoWatermark{}, 64), std::invalid_argument);
  const std::vector<TokenId> one{1};
  CHECK_THROWS_AS(keyed_zscore(one, kgw, 64), std::invalid_argument);
}

TEST_CASE("validate_scheme domains") {
  KgwScheme k;
  k.gamma = 0.0;
  CHECK_THROWS_AS(validate_scheme(k), std::invalid_argument);
  k.gamma = 0.5;
  k.delta = -1.0;
  CHECK_THROWS_AS(validate_scheme(k), std::invalid_argument);
  AarScheme a;
  a.prefix_length = 0;
  CHECK_THROWS_AS(validate_scheme(a), std::invalid_argument);
  CHECK_NOTHROW(validate_scheme(NoWatermark{}));
}
