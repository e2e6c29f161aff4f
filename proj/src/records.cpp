// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include "wmaudit/records.hpp"

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

namespace wmaudit {

using nlohmann::json;

json scheme_to_json(const SchemeConfig& scheme) {
  return std::visit(
      [](const auto& s) -> json {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, KgwScheme>) {
          return {{"type", "kgw"}, {"gamma", s.gamma}, {"delta", s.delta}, {"key", s.key},
                  {"prefix_length", s.prefix_length}};
        } else if constexpr (std::is_same_v<S, UnigramScheme>) {
          return {{"type", "unigram"}, {"gamma", s.gamma}, {"delta", s.delta}, {"key", s.key}};
        } else if constexpr (std::is_same_v<S, AarScheme>) {
          return {{"type", "aar"}, {"key", s.key}, {"prefix_length", s.prefix_length}};
        } else {
          return {{"type", "none"}};
        }
      },
      scheme);
}

SchemeConfig scheme_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("scheme: expected an object");
  const std::string type = j.value("type", std::string("none"));
  SchemeConfig out;
  if (type == "none") {
    out = NoWatermark{};
  } else if (type == "kgw") {
    KgwScheme s;
    s.gamma = j.value("gamma", s.gamma);
    s.delta = j.value("delta", s.delta);
    s.key = j.value("key", s.key);
    s.prefix_length = j.value("prefix_length", s.prefix_length);
    out = s;
  } else if (type == "unigram") {
    UnigramScheme s;
    s.gamma = j.value("gamma", s.gamma);
    s.delta = j.value("delta", s.delta);
    s.key = j.value("key", s.key);
    out = s;
  } else if (type == "aar") {
    AarScheme s;
    s.key = j.value("key", s.key);
    s.prefix_length = j.value("prefix_length", s.prefix_length);
    out = s;
  } else {
    throw std::invalid_argument("scheme.type: unknown scheme '" + type + "'");
  }
  validate_scheme(out);
  return out;
}

json record_to_json(const GenRecord& rec) {
  return {{"id", rec.id},
          {"prompt", rec.prompt.ids},
          {"completion", rec.completion.ids},
          {"watermarked", rec.watermarked},
          {"scheme", scheme_to_json(rec.scheme)},
          {"seed", rec.seed},
          {"vocab_size", rec.completion.vocab_size}};
}

GenRecord record_from_json(const json& j) {
  GenRecord rec;
  rec.id = j.at("id").get<std::string>();
  const auto vocab = j.at("vocab_size").get<std::size_t>();
  rec.prompt = TokenSeq{j.at("prompt").get<std::vector<TokenId>>(), vocab};
  rec.completion = TokenSeq{j.at("completion").get<std::vector<TokenId>>(), vocab};
  rec.watermarked = j.at("watermarked").get<bool>();
  rec.scheme = scheme_from_json(j.at("scheme"));
  rec.seed = j.at("seed").get<std::uint64_t>();
  rec.prompt.validate();
  rec.completion.validate();
  if (rec.completion.empty()) throw std::invalid_argument("record '" + rec.id + "': empty completion");
  return rec;
}

void write_records(std::ostream& out, const std::vector<GenRecord>& records) {
  for (const auto& rec : records) out << record_to_json(rec).dump() << '\n';
}

void write_records(const std::filesystem::path& path, const std::vector<GenRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_records(out, records);
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::vector<GenRecord> read_records(std::istream& in) {
  std::vector<GenRecord> out;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("record line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!seen.insert(out.back().id).second)
      throw std::runtime_error("record line " + std::to_string(lineno) + ": duplicate id '" +
                               out.back().id + "'");
  }
  return out;
}

std::vector<GenRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return read_records(in);
}

}  // namespace wmaudit
