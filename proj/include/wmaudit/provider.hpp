// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

// Simulated text provider: an order-k Markov language model with a generation
// API that carries a binary watermark flag, the KGW / Unigram / AAR-style
// schemes, and the keyed z-score detector used only as a ground-truth oracle.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "wmaudit/prf.hpp"
#include "wmaudit/tokens.hpp"

namespace wmaudit {

inline constexpr std::uint64_t kDefaultSchemeKey = 15485863;

struct NoWatermark {};

struct KgwScheme {
  double gamma = 0.5;
  double delta = 2.0;
  std::uint64_t key = kDefaultSchemeKey;
  std::size_t prefix_length = 1;
};

/// KGW with a fixed, context-free partition.
struct UnigramScheme {
  double gamma = 0.5;
  double delta = 2.0;
  std::uint64_t key = kDefaultSchemeKey;
};

/// Exponential-minimum (Aaronson-style) sampling keyed on the previous
/// prefix_length tokens. Steps whose window already occurred in the same
/// text fall back to ordinary sampling.
struct AarScheme {
  std::uint64_t key = kDefaultSchemeKey;
  std::size_t prefix_length = 1;
};

using SchemeConfig = std::variant<NoWatermark, KgwScheme, UnigramScheme, AarScheme>;

/// Throws std::invalid_argument when gamma, delta or prefix_length is out of domain.
void validate_scheme(const SchemeConfig& scheme);
std::string scheme_name(const SchemeConfig& scheme);
bool has_watermark(const SchemeConfig& scheme) noexcept;

struct ContextHash {
  std::size_t operator()(const std::vector<TokenId>& ctx) const noexcept {
    return static_cast<std::size_t>(hash_ids(0x5bd1e995ULL, ctx));
  }
};

using LogitTable = std::unordered_map<std::vector<TokenId>, std::vector<double>, ContextHash>;

/// Back-off Markov model. Lookups try the longest stored suffix of the
/// context (at most `order` tokens) and fall back to shorter ones; the
/// empty-context (unigram) row always exists.
class MarkovModel {
 public:
  MarkovModel(std::size_t order, std::size_t vocab_size, LogitTable table, double temperature = 1.0);

  /// A model whose only row is the all-zero unigram entry.
  static MarkovModel uniform(std::size_t vocab_size, std::size_t order = 1);

  std::size_t order() const noexcept { return order_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  double temperature() const noexcept { return temperature_; }
  std::size_t table_size() const noexcept { return table_.size(); }
  const LogitTable& table() const noexcept { return table_; }

  bool has_context(std::span<const TokenId> context) const;

  /// Stored row for the longest known suffix of `context`.
  std::span<const double> lookup(std::span<const TokenId> context) const;

  MarkovModel with_temperature(double temperature) const;

 private:
  std::size_t order_;
  std::size_t vocab_size_;
  double temperature_;
  LogitTable table_;
};

/// Counts every context of length 0..order within each sequence and stores
/// log(count + smoothing) rows. Throws on an empty corpus, zero order,
/// non-positive smoothing, or sequences that disagree on vocab_size.
MarkovModel train_markov(std::span<const TokenSeq> corpus, std::size_t order, double smoothing,
                         double temperature = 1.0);

std::vector<double> logits(const MarkovModel& model, std::span<const TokenId> context);

std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);
std::vector<double> log_softmax(std::span<const double> logits);

/// Keyed partition: a Fisher-Yates permutation of [0, vocab) seeded by
/// hash_ids(key, context_window); the first round(gamma * vocab) entries are
/// green. Returned sorted ascending.
std::vector<TokenId> green_list(std::uint64_t key, std::span<const TokenId> context_window,
                                double gamma, std::size_t vocab_size);

/// Same partition as a membership mask of length vocab_size.
std::vector<std::uint8_t> green_mask(std::uint64_t key, std::span<const TokenId> context_window,
                                     double gamma, std::size_t vocab_size);

/// l[v] + delta for green v. Throws std::out_of_range on an out-of-range id.
std::vector<double> apply_kgw_bias(std::span<const double> logits, std::span<const TokenId> green,
                                   double delta);

/// Gumbel-max draw from softmax(logits / temperature). temperature == 0 is
/// argmax with the lowest index winning ties. Throws std::invalid_argument
/// when every logit is -inf or temperature is negative.
TokenId sample_token(std::span<const double> logits, double temperature, Rng& rng);

/// The AAR uniform r_v in (0,1) for token v under (key, context_window).
double aar_uniform(std::uint64_t key, std::span<const TokenId> context_window, TokenId token);

/// argmax_v r_v^{1/p_v} with p = softmax(logits); deterministic.
TokenId aar_sample(std::span<const double> logits, std::uint64_t key,
                   std::span<const TokenId> context_window);

struct GenRecord {
  std::string id;
  TokenSeq prompt;
  TokenSeq completion;
  bool watermarked = false;
  SchemeConfig scheme;
  std::uint64_t seed = 0;
};

/// Autoregressive generation: logits -> (KGW bias | AAR draw when watermark
/// is set) -> sampling. A pure function of its arguments.
GenRecord generate(const MarkovModel& model, std::span<const TokenId> prompt, std::size_t length,
                   const SchemeConfig& scheme, bool watermark, std::uint64_t seed,
                   std::string id = {});

struct GreenCount {
  std::size_t green = 0;
  std::size_t scorable = 0;
  double gamma = 0.5;
};

/// Green hits over scorable positions (T - prefix_length for KGW, T for Unigram).
GreenCount count_green(std::span<const TokenId> tokens, const SchemeConfig& scheme,
                       std::size_t vocab_size);

/// One-proportion z = (c - gamma T') / sqrt(gamma (1 - gamma) T').
double zscore(const GreenCount& count);

/// Keyed oracle detector. Throws std::invalid_argument for AAR / no scheme or
/// when the text has no scorable position.
double keyed_zscore(std::span<const TokenId> tokens, const SchemeConfig& scheme,
                    std::size_t vocab_size);

/// Random order-k teacher chain with Dirichlet(concentration) rows, used to
/// synthesize a training corpus for the provider.
struct TeacherConfig {
  std::size_t vocab_size = 64;
  std::size_t order = 2;
  std::size_t sequences = 400;
  std::size_t length = 300;
  double concentration = 0.02;
};

std::vector<TokenSeq> synthetic_corpus(const TeacherConfig& config, std::uint64_t seed);

/// Unwatermarked draw of `length` tokens from an empty context.
TokenSeq sample_prompt(const MarkovModel& model, std::size_t length, std::uint64_t seed);

/// The provider S: a model plus the scheme it applies when asked to watermark.
struct Provider {
  MarkovModel model;
  SchemeConfig scheme;
};

}  // namespace wmaudit
