// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include "wmaudit/provider.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace wmaudit {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::span<const TokenId> tail(std::span<const TokenId> seq, std::size_t n) {
  n = std::min(n, seq.size());
  return seq.subspan(seq.size() - n, n);
}

std::size_t green_size(double gamma, std::size_t vocab_size) {
  return static_cast<std::size_t>(std::lround(gamma * static_cast<double>(vocab_size)));
}

std::vector<TokenId> keyed_permutation(std::uint64_t key, std::span<const TokenId> context_window,
                                       std::size_t vocab_size) {
  std::vector<TokenId> perm(vocab_size);
  std::iota(perm.begin(), perm.end(), TokenId{0});
  SplitMix64 stream(hash_ids(key, context_window));
  for (std::size_t i = vocab_size; i-- > 1;) {
    const auto j = static_cast<std::size_t>(bounded(stream.next(), i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

}  // namespace

void validate_scheme(const SchemeConfig& scheme) {
  auto check_gamma = [](double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("scheme.gamma must lie in (0,1)");
  };
  auto check_delta = [](double delta) {
    if (!(delta >= 0.0) || !std::isfinite(delta))
      throw std::invalid_argument("scheme.delta must be a finite non-negative number");
  };
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, KgwScheme>) {
          check_gamma(s.gamma);
          check_delta(s.delta);
          if (s.prefix_length < 1) throw std::invalid_argument("scheme.prefix_length must be >= 1");
        } else if constexpr (std::is_same_v<S, UnigramScheme>) {
          check_gamma(s.gamma);
          check_delta(s.delta);
        } else if constexpr (std::is_same_v<S, AarScheme>) {
          if (s.prefix_length < 1) throw std::invalid_argument("scheme.prefix_length must be >= 1");
        }
      },
      scheme);
}

std::string scheme_name(const SchemeConfig& scheme) {
  switch (scheme.index()) {
    case 0: return "none";
    case 1: return "kgw";
    case 2: return "unigram";
    default: return "aar";
  }
}

bool has_watermark(const SchemeConfig& scheme) noexcept {
  return !std::holds_alternative<NoWatermark>(scheme);
}

// --- MarkovModel -------------------------------------------------------------

MarkovModel::MarkovModel(std::size_t order, std::size_t vocab_size, LogitTable table,
                         double temperature)
    : order_(order), vocab_size_(vocab_size), temperature_(temperature), table_(std::move(table)) {
  if (order_ < 1) throw std::invalid_argument("MarkovModel: order must be >= 1");
  if (vocab_size_ == 0) throw std::invalid_argument("MarkovModel: vocab_size must be positive");
  if (!(temperature_ >= 0.0)) throw std::invalid_argument("MarkovModel: temperature must be >= 0");
  if (!table_.contains({})) throw std::invalid_argument("MarkovModel: missing unigram row");
  for (const auto& [ctx, row] : table_) {
    if (ctx.size() > order_) throw std::invalid_argument("MarkovModel: context longer than order");
    if (row.size() != vocab_size_) throw std::invalid_argument("MarkovModel: logit row has wrong length");
  }
}

MarkovModel MarkovModel::uniform(std::size_t vocab_size, std::size_t order) {
  LogitTable table;
  table.emplace(std::vector<TokenId>{}, std::vector<double>(vocab_size, 0.0));
  return MarkovModel(order, vocab_size, std::move(table));
}

bool MarkovModel::has_context(std::span<const TokenId> context) const {
  return table_.contains(std::vector<TokenId>(context.begin(), context.end()));
}

std::span<const double> MarkovModel::lookup(std::span<const TokenId> context) const {
  thread_local std::vector<TokenId> key;
  for (std::size_t n = std::min(order_, context.size()); n > 0; --n) {
    const auto window = tail(context, n);
    key.assign(window.begin(), window.end());
    if (auto it = table_.find(key); it != table_.end()) return it->second;
  }
  key.clear();
  return table_.find(key)->second;
}

MarkovModel MarkovModel::with_temperature(double temperature) const {
  return MarkovModel(order_, vocab_size_, table_, temperature);
}

MarkovModel train_markov(std::span<const TokenSeq> corpus, std::size_t order, double smoothing,
                         double temperature) {
  if (corpus.empty()) throw std::invalid_argument("train_markov: empty corpus");
  if (order < 1) throw std::invalid_argument("train_markov: order must be >= 1");
  if (!(smoothing > 0.0)) throw std::invalid_argument("train_markov: smoothing must be positive");
  const std::size_t vocab = corpus.front().vocab_size;
  for (const auto& seq : corpus) {
    if (seq.vocab_size != vocab) throw std::invalid_argument("train_markov: inconsistent vocab_size");
    seq.validate();
  }

  std::unordered_map<std::vector<TokenId>, std::vector<double>, ContextHash> counts;
  counts[{}].assign(vocab, 0.0);
  std::vector<TokenId> ctx;
  for (const auto& seq : corpus) {
    const auto& ids = seq.ids;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t n = 0; n <= order && n <= i; ++n) {
        ctx.assign(ids.begin() + static_cast<std::ptrdiff_t>(i - n),
                   ids.begin() + static_cast<std::ptrdiff_t>(i));
        auto& row = counts[ctx];
        if (row.empty()) row.assign(vocab, 0.0);
        row[static_cast<std::size_t>(ids[i])] += 1.0;
      }
    }
  }
  for (auto& [_, row] : counts)
    for (double& c : row) c = std::log(c + smoothing);
  return MarkovModel(order, vocab, std::move(counts), temperature);
}

std::vector<double> logits(const MarkovModel& model, std::span<const TokenId> context) {
  const auto row = model.lookup(context);
  return {row.begin(), row.end()};
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  if (hi == kNegInf) throw std::invalid_argument("log_softmax: all logits are -inf");
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - hi);
  const double norm = hi + std::log(sum);
  std::vector<double> out(logits.size());
  std::transform(logits.begin(), logits.end(), out.begin(), [norm](double l) { return l - norm; });
  return out;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be positive");
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& l : scaled) l /= temperature;
  auto out = log_softmax(scaled);
  for (double& l : out) l = std::exp(l);
  return out;
}

// --- Watermark primitives ----------------------------------------------------

std::vector<TokenId> green_list(std::uint64_t key, std::span<const TokenId> context_window,
                                double gamma, std::size_t vocab_size) {
  auto perm = keyed_permutation(key, context_window, vocab_size);
  perm.resize(green_size(gamma, vocab_size));
  std::sort(perm.begin(), perm.end());
  return perm;
}

std::vector<std::uint8_t> green_mask(std::uint64_t key, std::span<const TokenId> context_window,
                                     double gamma, std::size_t vocab_size) {
  const auto perm = keyed_permutation(key, context_window, vocab_size);
  std::vector<std::uint8_t> mask(vocab_size, 0);
  const std::size_t n = green_size(gamma, vocab_size);
  for (std::size_t i = 0; i < n; ++i) mask[static_cast<std::size_t>(perm[i])] = 1;
  return mask;
}

std::vector<double> apply_kgw_bias(std::span<const double> logits, std::span<const TokenId> green,
                                   double delta) {
  std::vector<double> out(logits.begin(), logits.end());
  for (TokenId v : green) {
    if (v < 0 || static_cast<std::size_t>(v) >= out.size())
      throw std::out_of_range("apply_kgw_bias: green token " + std::to_string(v) + " out of range");
    out[static_cast<std::size_t>(v)] += delta;
  }
  return out;
}

TokenId sample_token(std::span<const double> logits, double temperature, Rng& rng) {
  if (logits.empty()) throw std::invalid_argument("sample_token: empty logits");
  if (!(temperature >= 0.0)) throw std::invalid_argument("sample_token: temperature must be >= 0");
  if (*std::max_element(logits.begin(), logits.end()) == kNegInf)
    throw std::invalid_argument("sample_token: all logits are -inf");

  if (temperature == 0.0) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  // One uniform per vocabulary entry, consumed in order, regardless of masking.
  double best = kNegInf;
  TokenId best_id = -1;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    const double gumbel = -std::log(-std::log(rng.uniform()));
    if (logits[v] == kNegInf) continue;
    const double key = logits[v] / temperature + gumbel;
    if (best_id < 0 || key > best) {
      best = key;
      best_id = static_cast<TokenId>(v);
    }
  }
  return best_id;
}

double aar_uniform(std::uint64_t key, std::span<const TokenId> context_window, TokenId token) {
  const std::uint64_t h = hash_ids(key, context_window);
  return to_unit_open(mix64(h ^ mix64(static_cast<std::uint64_t>(static_cast<std::uint32_t>(token)))));
}

TokenId aar_sample(std::span<const double> logits, std::uint64_t key,
                   std::span<const TokenId> context_window) {
  const auto p = softmax(logits);
  const std::uint64_t h = hash_ids(key, context_window);
  double best = kNegInf;
  TokenId best_id = -1;
  for (std::size_t v = 0; v < p.size(); ++v) {
    if (p[v] <= 0.0) continue;
    const double r = to_unit_open(mix64(h ^ mix64(static_cast<std::uint64_t>(v))));
    // log(r^{1/p}) keeps the ordering of r^{1/p} without underflow.
    const double score = std::log(r) / p[v];
    if (best_id < 0 || score > best) {
      best = score;
      best_id = static_cast<TokenId>(v);
    }
  }
  return best_id;
}

GenRecord generate(const MarkovModel& model, std::span<const TokenId> prompt, std::size_t length,
                   const SchemeConfig& scheme, bool watermark, std::uint64_t seed, std::string id) {
  if (length < 1) throw std::invalid_argument("generate: length must be >= 1");
  if (!in_vocab(prompt, model.vocab_size()))
    throw std::invalid_argument("generate: prompt id outside vocabulary");
  validate_scheme(scheme);

  const std::size_t vocab = model.vocab_size();
  const double temperature = model.temperature();
  const bool marking = watermark && has_watermark(scheme);

  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  seq.reserve(prompt.size() + length);
  Rng rng(seed);
  // AAR keys each generation with a per-request nonce on top of the secret key.
  const std::uint64_t aar_nonce = derive_seed(seed, "aar-nonce");
  std::unordered_set<std::uint64_t> aar_windows;
  std::vector<std::uint8_t> unigram_mask;
  if (marking) {
    if (const auto* uni = std::get_if<UnigramScheme>(&scheme))
      unigram_mask = green_mask(uni->key, {}, uni->gamma, vocab);
  }

  std::vector<double> row(vocab);
  for (std::size_t step = 0; step < length; ++step) {
    const std::span<const TokenId> ctx(seq);
    const auto base = model.lookup(ctx);
    std::copy(base.begin(), base.end(), row.begin());
    TokenId next = 0;
    if (!marking) {
      next = sample_token(row, temperature, rng);
    } else if (const auto* kgw = std::get_if<KgwScheme>(&scheme)) {
      const auto mask = green_mask(kgw->key, tail(ctx, kgw->prefix_length), kgw->gamma, vocab);
      for (std::size_t v = 0; v < vocab; ++v)
        if (mask[v]) row[v] += kgw->delta;
      next = sample_token(row, temperature, rng);
    } else if (const auto* uni = std::get_if<UnigramScheme>(&scheme)) {
      for (std::size_t v = 0; v < vocab; ++v)
        if (unigram_mask[v]) row[v] += uni->delta;
      next = sample_token(row, temperature, rng);
    } else {
      const auto& aar = std::get<AarScheme>(scheme);
      const auto window = tail(ctx, aar.prefix_length);
      // A window seen earlier in this text would replay the same keyed
      // uniforms; sample those steps ordinarily.
      if (aar_windows.insert(hash_ids(0, window)).second) {
        if (temperature > 0.0)
          for (double& l : row) l /= temperature;
        next = aar_sample(row, mix64(aar.key ^ aar_nonce), window);
      } else {
        next = sample_token(row, temperature, rng);
      }
    }
    seq.push_back(next);
  }

  GenRecord rec;
  rec.id = std::move(id);
  rec.prompt = TokenSeq{{prompt.begin(), prompt.end()}, vocab};
  rec.completion = TokenSeq{{seq.begin() + static_cast<std::ptrdiff_t>(prompt.size()), seq.end()}, vocab};
  rec.watermarked = watermark;
  rec.scheme = scheme;
  rec.seed = seed;
  return rec;
}

// --- Keyed oracle ------------------------------------------------------------

GreenCount count_green(std::span<const TokenId> tokens, const SchemeConfig& scheme,
                       std::size_t vocab_size) {
  GreenCount out;
  if (const auto* kgw = std::get_if<KgwScheme>(&scheme)) {
    out.gamma = kgw->gamma;
    for (std::size_t i = kgw->prefix_length; i < tokens.size(); ++i) {
      const auto mask = green_mask(kgw->key, tokens.subspan(i - kgw->prefix_length, kgw->prefix_length),
                                   kgw->gamma, vocab_size);
      out.green += mask[static_cast<std::size_t>(tokens[i])];
      ++out.scorable;
    }
  } else if (const auto* uni = std::get_if<UnigramScheme>(&scheme)) {
    out.gamma = uni->gamma;
    const auto mask = green_mask(uni->key, {}, uni->gamma, vocab_size);
    for (TokenId t : tokens) out.green += mask[static_cast<std::size_t>(t)];
    out.scorable = tokens.size();
  } else {
    throw std::invalid_argument("keyed detection requires a KGW or Unigram scheme (no green list for " +
                                scheme_name(scheme) + ")");
  }
  return out;
}

double zscore(const GreenCount& count) {
  if (count.scorable == 0) throw std::invalid_argument("zscore: no scorable positions");
  const double t = static_cast<double>(count.scorable);
  const double g = count.gamma;
  return (static_cast<double>(count.green) - g * t) / std::sqrt(g * (1.0 - g) * t);
}

double keyed_zscore(std::span<const TokenId> tokens, const SchemeConfig& scheme,
                    std::size_t vocab_size) {
  validate_scheme(scheme);
  if (!in_vocab(tokens, vocab_size)) throw std::invalid_argument("keyed_zscore: id outside vocabulary");
  return zscore(count_green(tokens, scheme, vocab_size));
}

// --- Corpus synthesis --------------------------------------------------------

std::vector<TokenSeq> synthetic_corpus(const TeacherConfig& config, std::uint64_t seed) {
  if (config.vocab_size < 2) throw std::invalid_argument("synthetic_corpus: vocab_size must be >= 2");
  if (!(config.concentration > 0.0))
    throw std::invalid_argument("synthetic_corpus: concentration must be positive");
  const std::size_t vocab = config.vocab_size;

  // Teacher rows are a deterministic function of (seed, context), built on demand.
  LogitTable cache;
  auto row_for = [&](std::span<const TokenId> ctx) -> const std::vector<double>& {
    std::vector<TokenId> key(ctx.begin(), ctx.end());
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::mt19937_64 engine(hash_ids(derive_seed(seed, "teacher-row"), ctx));
    std::gamma_distribution<double> gamma(config.concentration, 1.0);
    std::vector<double> cdf(vocab);
    double total = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      total += gamma(engine);
      cdf[v] = total;
    }
    if (total <= 0.0) {
      for (std::size_t v = 0; v < vocab; ++v) cdf[v] = static_cast<double>(v + 1);
      total = static_cast<double>(vocab);
    }
    for (double& c : cdf) c /= total;
    return cache.emplace(std::move(key), std::move(cdf)).first->second;
  };

  std::vector<TokenSeq> corpus;
  corpus.reserve(config.sequences);
  Rng rng(derive_seed(seed, "teacher-sample"));
  for (std::size_t s = 0; s < config.sequences; ++s) {
    TokenSeq seq{{}, vocab};
    seq.ids.reserve(config.length);
    for (std::size_t i = 0; i < config.length; ++i) {
      const auto& cdf = row_for(tail(seq.ids, config.order));
      const double u = rng.uniform();
      const auto pos = std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
      seq.ids.push_back(static_cast<TokenId>(std::min<std::ptrdiff_t>(pos, static_cast<std::ptrdiff_t>(vocab) - 1)));
    }
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

TokenSeq sample_prompt(const MarkovModel& model, std::size_t length, std::uint64_t seed) {
  return generate(model, {}, length, NoWatermark{}, false, seed).completion;
}

}  // namespace wmaudit
