// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmaudit {

using TokenId = std::int32_t;

/// Integer token sequence over a finite vocabulary.
struct TokenSeq {
  std::vector<TokenId> ids;
  std::size_t vocab_size = 0;

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
  std::span<const TokenId> view() const noexcept { return ids; }

  /// Throws std::invalid_argument if any id falls outside [0, vocab_size).
  void validate() const {
    if (vocab_size == 0) throw std::invalid_argument("TokenSeq: vocab_size must be positive");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_size)
        throw std::invalid_argument("TokenSeq: id " + std::to_string(ids[i]) + " at position " +
                                    std::to_string(i) + " outside vocabulary of size " +
                                    std::to_string(vocab_size));
    }
  }
};

inline bool in_vocab(std::span<const TokenId> ids, std::size_t vocab_size) noexcept {
  for (TokenId id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) return false;
  return true;
}

}  // namespace wmaudit
