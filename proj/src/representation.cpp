// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include "wmaudit/representation.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "wmaudit/prf.hpp"

namespace wmaudit {

namespace {
constexpr std::uint64_t kNgramSalt = 0x6e6772616d730000ULL;  // "ngrams\0\0"
}  // namespace

FeatureVec FeatureVec::normalized(Eigen::VectorXd raw) {
  if (raw.size() == 0) throw std::invalid_argument("FeatureVec: empty vector");
  if (!raw.allFinite()) throw std::invalid_argument("FeatureVec: non-finite entry");
  const double norm = raw.norm();
  if (!(norm > 0.0)) throw std::invalid_argument("FeatureVec: zero vector cannot be normalized");
  raw /= norm;
  return FeatureVec(std::move(raw));
}

FeatureVec FeatureVec::basis(std::size_t dim, std::size_t index) {
  if (index >= dim) throw std::invalid_argument("FeatureVec::basis: index out of range");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  v(static_cast<Eigen::Index>(index)) = 1.0;
  return FeatureVec(std::move(v));
}

NLLStats NLLStats::from_sequence(std::vector<double> nll) {
  NLLStats s;
  s.nll = std::move(nll);
  if (s.nll.empty()) return s;
  double sum = 0.0;
  for (double l : s.nll) sum += l;
  s.ge = sum / static_cast<double>(s.nll.size());
  double sq = 0.0;
  for (double l : s.nll) sq += (l - s.ge) * (l - s.ge);
  s.lv = std::sqrt(sq / static_cast<double>(s.nll.size()));
  return s;
}

NgramSlot ngram_slot(std::span<const TokenId> gram, std::size_t dim) {
  const std::uint64_t h = hash_ids(kNgramSalt + gram.size(), gram);
  return {static_cast<std::size_t>(bounded(h, dim)), (mix64(h) >> 63) ? -1.0 : 1.0};
}

FeatureVec featurize_ngram(std::span<const TokenId> tokens, std::size_t dim, std::size_t n_max) {
  if (dim < 2) throw std::invalid_argument("featurize_ngram: dim must be >= 2");
  if (n_max < 1) throw std::invalid_argument("featurize_ngram: n_max must be >= 1");
  Eigen::VectorXd profile = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  for (std::size_t n = 1; n <= n_max && n <= tokens.size(); ++n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      const auto slot = ngram_slot(tokens.subspan(i, n), dim);
      profile(static_cast<Eigen::Index>(slot.bucket)) += slot.sign;
    }
  }
  if (profile.squaredNorm() == 0.0) return FeatureVec::basis(dim, 0);
  return FeatureVec::normalized(std::move(profile));
}

Featurizer ngram_featurizer(std::size_t dim, std::size_t n_max) {
  if (dim < 2 || n_max < 1) throw std::invalid_argument("ngram_featurizer: need dim >= 2, n_max >= 1");
  return [dim, n_max](std::span<const TokenId> tokens) { return featurize_ngram(tokens, dim, n_max); };
}

std::map<std::string, FeatureVec> load_embeddings(std::istream& in) {
  std::map<std::string, FeatureVec> out;
  std::size_t dim = 0;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      return std::runtime_error("embedding line " + std::to_string(lineno) + ": " + why);
    };
    std::string id;
    std::vector<double> values;
    try {
      const auto j = nlohmann::json::parse(line);
      id = j.at("id").get<std::string>();
      values = j.at("vec").get<std::vector<double>>();
    } catch (const std::exception& e) {
      throw fail(std::string("malformed record (") + e.what() + ")");
    }
    if (values.empty()) throw fail("empty vector");
    if (dim == 0) dim = values.size();
    if (values.size() != dim)
      throw fail("dimension " + std::to_string(values.size()) + " differs from " + std::to_string(dim));
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(dim));
    if (!v.allFinite()) throw fail("non-finite value");
    if (!(v.norm() > 0.0)) throw fail("zero vector");
    // Every vector is rescaled, not only those off by more than 1e-6, so the
    // unit-norm invariant holds at 1e-9.
    auto fv = FeatureVec::normalized(std::move(v));
    if (!out.emplace(id, std::move(fv)).second) throw fail("duplicate id '" + id + "'");
  }
  return out;
}

std::map<std::string, FeatureVec> load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file '" + path.string() + "'");
  return load_embeddings(in);
}

NLLStats nll_sequence(const MarkovModel& model, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw std::invalid_argument("nll_sequence: empty token sequence");
  if (!in_vocab(tokens, model.vocab_size()))
    throw std::invalid_argument("nll_sequence: token outside vocabulary");
  std::vector<double> nll(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto row = model.lookup(tokens.first(i));
    double hi = row[0];
    for (double l : row) hi = std::max(hi, l);
    double sum = 0.0;
    for (double l : row) sum += std::exp(l - hi);
    nll[i] = hi + std::log(sum) - row[static_cast<std::size_t>(tokens[i])];
    if (!std::isfinite(nll[i])) throw std::logic_error("nll_sequence: zero-probability token");
  }
  return NLLStats::from_sequence(std::move(nll));
}

void ReferenceBundle::validate() const {
  const std::size_t n = z_o.size();
  if (n == 0) throw std::invalid_argument("ReferenceBundle: empty reference sets");
  if (z_wm.size() != n || nll_o.size() != n || nll_wm.size() != n)
    throw std::invalid_argument("ReferenceBundle: reference sets differ in size");
  const std::size_t d = z_q.dim();
  for (const auto* set : {&z_o, &z_wm})
    for (const auto& z : *set)
      if (z.dim() != d) throw std::invalid_argument("ReferenceBundle: feature dimensions disagree");
}

ReferenceBundle ReferenceBundle::swapped() const {
  ReferenceBundle out = *this;
  std::swap(out.z_o, out.z_wm);
  std::swap(out.nll_o, out.nll_wm);
  return out;
}

ReferenceBundle build_reference_bundle(const Provider& provider, const MarkovModel& scoring_model,
                                       const Featurizer& featurizer, std::span<const TokenId> query,
                                       const BundleParams& params, std::uint64_t seed) {
  if (params.n_refs < 1) throw std::invalid_argument("build_reference_bundle: N must be >= 1");
  if (query.size() < params.prefix_len || query.empty())
    throw std::invalid_argument("build_reference_bundle: query has " + std::to_string(query.size()) +
                                " tokens, fewer than prefix_len " + std::to_string(params.prefix_len));
  const auto prompt = query.first(params.prefix_len);
  const std::size_t gen_len = params.gen_len > 0 ? params.gen_len : query.size();

  ReferenceBundle b;
  b.z_o.reserve(params.n_refs);
  b.z_wm.reserve(params.n_refs);
  for (std::size_t j = 0; j < params.n_refs; ++j) {
    const auto o = generate(provider.model, prompt, gen_len, provider.scheme, false,
                            derive_seed(seed, "ref-o", j));
    const auto wm = generate(provider.model, prompt, gen_len, provider.scheme, true,
                             derive_seed(seed, "ref-wm", j));
    b.z_o.push_back(featurizer(o.completion.ids));
    b.nll_o.push_back(nll_sequence(scoring_model, o.completion.ids));
    b.z_wm.push_back(featurizer(wm.completion.ids));
    b.nll_wm.push_back(nll_sequence(scoring_model, wm.completion.ids));
  }
  b.z_q = featurizer(query);
  b.nll_q = nll_sequence(scoring_model, query);
  return b;
}

}  // namespace wmaudit
