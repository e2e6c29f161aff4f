// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

// JSON Lines persistence for generation records. One record per line:
//   {"id", "prompt":[int], "completion":[int], "watermarked":bool,
//    "scheme":{...}, "seed":int, "vocab_size":int}

#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "json.hpp"
#include "wmaudit/provider.hpp"

namespace wmaudit {

nlohmann::json scheme_to_json(const SchemeConfig& scheme);
/// Accepts {"type": "none" | "kgw" | "unigram" | "aar", ...}; missing
/// parameters take the defaults of the scheme struct.
SchemeConfig scheme_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const GenRecord& rec);
GenRecord record_from_json(const nlohmann::json& j);

void write_records(std::ostream& out, const std::vector<GenRecord>& records);
void write_records(const std::filesystem::path& path, const std::vector<GenRecord>& records);

/// Throws std::runtime_error naming the line on malformed input or duplicate ids.
std::vector<GenRecord> read_records(std::istream& in);
std::vector<GenRecord> read_records(const std::filesystem::path& path);

}  // namespace wmaudit
