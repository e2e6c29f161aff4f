// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include "wmaudit/audit.hpp"

namespace wmaudit {

GenRecord make_query(const Provider& provider, const QuerySpec& spec, bool watermark,
                     std::uint64_t seed, std::string id) {
  const auto prompt = sample_prompt(provider.model, spec.prompt_len, derive_seed(seed, "prompt"));
  return generate(provider.model, prompt.ids, spec.length, provider.scheme, watermark,
                  derive_seed(seed, "completion"), std::move(id));
}

RawScores measure_query(const AuditSetup& setup, std::span<const TokenId> query, std::uint64_t seed) {
  const auto bundle = build_reference_bundle(setup.provider, setup.scoring_model, setup.featurizer, query,
                                             setup.bundle, seed);
  return raw_scores(bundle, setup.measure);
}

}  // namespace wmaudit
