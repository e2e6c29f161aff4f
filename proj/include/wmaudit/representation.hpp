// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

// Text representations: unit-norm feature vectors standing in for proxy
// hidden states, token-wise NLL statistics under a scoring model, and the
// paired reference bundle built for one query.

#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wmaudit/provider.hpp"

namespace wmaudit {

/// An l2-normalized real vector. Construction always normalizes, so every
/// instance satisfies | ||z|| - 1 | <= 1e-9.
class FeatureVec {
 public:
  /// Throws std::invalid_argument on non-finite entries or a zero vector.
  static FeatureVec normalized(Eigen::VectorXd raw);
  /// Standard basis vector e_index.
  static FeatureVec basis(std::size_t dim, std::size_t index);

  const Eigen::VectorXd& values() const noexcept { return values_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_(static_cast<Eigen::Index>(i)); }

 private:
  explicit FeatureVec(Eigen::VectorXd v) : values_(std::move(v)) {}
  Eigen::VectorXd values_;
};

struct NLLStats {
  std::vector<double> nll;  // l_i = -log P(x_i | x_<i)
  double ge = 0.0;          // mean of nll
  double lv = 0.0;          // population standard deviation of nll

  static NLLStats from_sequence(std::vector<double> nll);
};

/// Signed-hash n-gram profile (1 <= n <= n_max) over `dim` buckets, then
/// l2-normalized. Empty input or an all-zero profile maps to e_0.
FeatureVec featurize_ngram(std::span<const TokenId> tokens, std::size_t dim = 256,
                           std::size_t n_max = 3);

/// Bucket index and sign that featurize_ngram assigns to one n-gram.
struct NgramSlot {
  std::size_t bucket;
  double sign;
};
NgramSlot ngram_slot(std::span<const TokenId> gram, std::size_t dim);

using Featurizer = std::function<FeatureVec(std::span<const TokenId>)>;

Featurizer ngram_featurizer(std::size_t dim = 256, std::size_t n_max = 3);

/// Reads {"id": string, "vec": [float]} JSON Lines; every vector is rescaled
/// to unit norm on load. Throws std::runtime_error on a
/// malformed line, dimension mismatch, non-finite value, or repeated id.
std::map<std::string, FeatureVec> load_embeddings(const std::filesystem::path& path);
std::map<std::string, FeatureVec> load_embeddings(std::istream& in);

/// Token-wise NLL of `tokens` under softmax(model logits); the first token is
/// scored with the unigram row.
NLLStats nll_sequence(const MarkovModel& model, std::span<const TokenId> tokens);

struct ReferenceBundle {
  std::vector<FeatureVec> z_o;
  std::vector<FeatureVec> z_wm;
  std::vector<NLLStats> nll_o;
  std::vector<NLLStats> nll_wm;
  FeatureVec z_q = FeatureVec::basis(1, 0);
  NLLStats nll_q;

  std::size_t size() const noexcept { return z_o.size(); }
  /// Throws std::invalid_argument when set sizes or dimensions disagree.
  void validate() const;
  ReferenceBundle swapped() const;
};

struct BundleParams {
  std::size_t n_refs = 16;     // N
  std::size_t prefix_len = 50;
  std::size_t gen_len = 0;     // 0: match the query length
};

/// Prompts the provider with the first prefix_len query tokens and draws N
/// watermarked and N unwatermarked completions, each with its own seed
/// derived from `seed`. Every text, the query included, is featurized and
/// scored. Throws std::invalid_argument when the query is shorter than
/// prefix_len or N == 0.
ReferenceBundle build_reference_bundle(const Provider& provider, const MarkovModel& scoring_model,
                                       const Featurizer& featurizer, std::span<const TokenId> query,
                                       const BundleParams& params, std::uint64_t seed);

}  // namespace wmaudit
