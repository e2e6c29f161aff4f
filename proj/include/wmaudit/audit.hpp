// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "wmaudit/measurements.hpp"
#include "wmaudit/provider.hpp"
#include "wmaudit/representation.hpp"

namespace wmaudit {

/// Everything the auditor holds: black-box access to the provider, its own
/// scoring model and featurizer, and the detection hyperparameters.
struct AuditSetup {
  Provider provider;
  MarkovModel scoring_model;
  Featurizer featurizer;
  BundleParams bundle;
  MeasureParams measure;
};

/// How test/validation queries are drawn: an unwatermarked prompt of
/// prompt_len tokens, then a completion of `length` tokens; the completion
/// alone is the query text.
struct QuerySpec {
  std::size_t prompt_len = 30;
  std::size_t length = 200;
};

GenRecord make_query(const Provider& provider, const QuerySpec& spec, bool watermark,
                     std::uint64_t seed, std::string id = {});

/// Builds the reference bundle for `query` and returns its raw measurements.
RawScores measure_query(const AuditSetup& setup, std::span<const TokenId> query, std::uint64_t seed);

}  // namespace wmaudit
