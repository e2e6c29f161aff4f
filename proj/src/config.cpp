// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include "wmaudit/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <type_traits>

#include "wmaudit/records.hpp"

namespace wmaudit {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw std::invalid_argument(field + " " + what);
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) fail(field, what);
}

bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

void reject_unknown(const json& section, const std::string& path, std::initializer_list<const char*> keys) {
  if (!section.is_object()) fail(path, "must be an object");
  for (const auto& item : section.items()) {
    const bool known = std::any_of(keys.begin(), keys.end(), [&](const char* k) { return item.key() == k; });
    if (!known) fail(path.empty() ? item.key() : path + "." + item.key(), "is not a recognized field");
  }
}

template <typename T>
void read(const json& section, const char* key, T& dst, const std::string& path) {
  const auto it = section.find(key);
  if (it == section.end()) return;
  const std::string field = path + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    require(it->is_boolean(), field, "must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    require(is_count(*it), field, "must be a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    require(it->is_number(), field, "must be a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    require(it->is_string(), field, "must be a string");
  }
  try {
    dst = it->get<T>();
  } catch (const json::exception&) {
    fail(field, "has the wrong type");
  }
}

template <typename T>
void read_list(const json& section, const char* key, std::vector<T>& dst, const std::string& path) {
  const auto it = section.find(key);
  if (it == section.end()) return;
  const std::string field = path + "." + key;
  require(it->is_array(), field, "must be an array");
  dst.clear();
  for (std::size_t i = 0; i < it->size(); ++i) {
    const auto& v = (*it)[i];
    require(is_count(v), field + "[" + std::to_string(i) + "]", "must be a non-negative integer");
    dst.push_back(v.get<T>());
  }
}

AttackConfig read_attack(const json& j, const std::string& field) {
  try {
    return attack_from_json(j);
  } catch (const std::exception& e) {
    fail(field, std::string("is invalid: ") + e.what());
  }
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  const auto& p = cfg.provider;
  require(p.order >= 1 && p.order <= 8, "provider.order", "must lie in [1, 8]");
  require(p.vocab_size >= 2, "provider.vocab_size", "must be >= 2");
  require(p.temperature >= 0.0 && std::isfinite(p.temperature), "provider.temperature", "must be finite and >= 0");
  require(p.smoothing > 0.0, "provider.smoothing", "must be positive");
  require(p.teacher_sequences >= 1, "provider.teacher_sequences", "must be >= 1");
  require(p.teacher_length > p.order, "provider.teacher_length", "must exceed provider.order");
  require(p.teacher_concentration > 0.0, "provider.teacher_concentration", "must be positive");
  require(p.scoring_order >= 1 && p.scoring_order <= 8, "provider.scoring_order", "must lie in [1, 8]");
  require(p.scoring_sequences >= 1, "provider.scoring_sequences", "must be >= 1");
  require(p.scoring_length >= 2, "provider.scoring_length", "must be >= 2");

  try {
    validate_scheme(cfg.scheme);
  } catch (const std::exception& e) {
    fail("scheme", std::string("is invalid: ") + e.what());
  }

  const auto& d = cfg.detection;
  require(d.n_refs >= 1, "detection.N", "must be >= 1");
  require(d.k <= 2 * d.n_refs, "detection.k", "must be 0 (auto) or at most 2N");
  require(d.alpha_shrink > 0.0, "detection.alpha_shrink", "must be positive");
  require(d.lambda >= 0.0 && d.lambda <= 1.0, "detection.lambda", "must lie in [0, 1]");
  require(d.epsilon > 0.0, "detection.epsilon", "must be positive");
  require(d.feature_dim >= 1, "detection.feature_dim", "must be >= 1");
  require(d.n_max >= 1, "detection.n_max", "must be >= 1");

  const auto& c = cfg.calibration;
  require(c.alpha_fpr > 0.0 && c.alpha_fpr < 1.0, "calibration.alpha_fpr", "must lie in (0, 1)");
  require(c.n_val_pairs >= 1, "calibration.n_val_pairs", "must be >= 1");
  require(c.n_benign >= 1, "calibration.n_benign", "must be >= 1");
  for (std::size_t i = 0; i < c.attacks.size(); ++i) {
    try {
      c.attacks[i].validate();
    } catch (const std::exception& e) {
      fail("calibration.attacks[" + std::to_string(i) + "]", std::string("is invalid: ") + e.what());
    }
  }
  require(c.epochs >= 1, "calibration.epochs", "must be >= 1");
  require(c.lr > 0.0, "calibration.lr", "must be positive");
  require(c.l2 >= 0.0, "calibration.l2", "must be >= 0");

  const auto& x = cfg.experiment;
  const bool known = std::any_of(std::begin(kExperimentKinds), std::end(kExperimentKinds),
                                 [&](const char* k) { return x.kind == k; });
  require(known, "experiment.kind",
          "must be one of detectability, robustness, sweep_N, sweep_length, ablation_leave_one_out (got '" +
              x.kind + "')");
  require(x.n_pairs >= 1, "experiment.n_pairs", "must be >= 1");
  require(!x.seeds.empty(), "experiment.seeds", "must not be empty");
  require(x.query_length >= 1, "experiment.query_length", "must be >= 1");
  require(x.query_length >= d.prefix_len, "experiment.query_length", "must be >= detection.prefix_len");
  if (x.attack) {
    try {
      x.attack->validate();
    } catch (const std::exception& e) {
      fail("experiment.attack", std::string("is invalid: ") + e.what());
    }
  }
  if (x.kind == "robustness") require(x.attack.has_value(), "experiment.attack", "is required for robustness");
  if (x.kind == "sweep_N" || x.kind == "sweep_length") {
    require(!x.sweep.empty(), "experiment.sweep", "must list the values to sweep");
    for (std::size_t i = 0; i < x.sweep.size(); ++i) {
      const std::string field = "experiment.sweep[" + std::to_string(i) + "]";
      require(x.sweep[i] >= 1, field, "must be >= 1");
      if (x.kind == "sweep_length") require(x.sweep[i] >= d.prefix_len, field, "must be >= detection.prefix_len");
    }
  }
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  reject_unknown(j, "", {"seed", "provider", "scheme", "detection", "calibration", "experiment"});
  if (j.contains("seed")) {
    require(is_count(j["seed"]), "seed", "must be a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("provider")) {
    const auto& s = j["provider"];
    reject_unknown(s, "provider",
                   {"order", "vocab_size", "corpus_path", "temperature", "smoothing", "teacher_sequences",
                    "teacher_length", "teacher_concentration", "scoring_order", "scoring_sequences",
                    "scoring_length"});
    auto& p = cfg.provider;
    read(s, "order", p.order, "provider");
    read(s, "vocab_size", p.vocab_size, "provider");
    read(s, "corpus_path", p.corpus_path, "provider");
    read(s, "temperature", p.temperature, "provider");
    read(s, "smoothing", p.smoothing, "provider");
    read(s, "teacher_sequences", p.teacher_sequences, "provider");
    read(s, "teacher_length", p.teacher_length, "provider");
    read(s, "teacher_concentration", p.teacher_concentration, "provider");
    read(s, "scoring_order", p.scoring_order, "provider");
    read(s, "scoring_sequences", p.scoring_sequences, "provider");
    read(s, "scoring_length", p.scoring_length, "provider");
  }
  if (j.contains("scheme")) {
    try {
      cfg.scheme = scheme_from_json(j["scheme"]);
    } catch (const std::exception& e) {
      fail("scheme", std::string("is invalid: ") + e.what());
    }
  }
  if (j.contains("detection")) {
    const auto& s = j["detection"];
    reject_unknown(s, "detection",
                   {"N", "prefix_len", "gen_len", "k", "d_prime", "alpha_shrink", "lambda", "epsilon",
                    "feature_dim", "n_max"});
    auto& d = cfg.detection;
    read(s, "N", d.n_refs, "detection");
    read(s, "prefix_len", d.prefix_len, "detection");
    read(s, "gen_len", d.gen_len, "detection");
    read(s, "k", d.k, "detection");
    read(s, "d_prime", d.d_prime, "detection");
    read(s, "alpha_shrink", d.alpha_shrink, "detection");
    read(s, "lambda", d.lambda, "detection");
    read(s, "epsilon", d.epsilon, "detection");
    read(s, "feature_dim", d.feature_dim, "detection");
    read(s, "n_max", d.n_max, "detection");
  }
  if (j.contains("calibration")) {
    const auto& s = j["calibration"];
    reject_unknown(s, "calibration", {"alpha_fpr", "n_val_pairs", "n_benign", "attacks", "epochs", "lr", "l2"});
    auto& c = cfg.calibration;
    read(s, "alpha_fpr", c.alpha_fpr, "calibration");
    read(s, "n_val_pairs", c.n_val_pairs, "calibration");
    read(s, "n_benign", c.n_benign, "calibration");
    read(s, "epochs", c.epochs, "calibration");
    read(s, "lr", c.lr, "calibration");
    read(s, "l2", c.l2, "calibration");
    if (s.contains("attacks")) {
      require(s["attacks"].is_array(), "calibration.attacks", "must be an array");
      c.attacks.clear();
      for (std::size_t i = 0; i < s["attacks"].size(); ++i)
        c.attacks.push_back(read_attack(s["attacks"][i], "calibration.attacks[" + std::to_string(i) + "]"));
    }
  }
  if (j.contains("experiment")) {
    const auto& s = j["experiment"];
    reject_unknown(s, "experiment",
                   {"kind", "n_pairs", "seeds", "query_length", "prompt_length", "attack", "sweep", "model_path"});
    auto& x = cfg.experiment;
    read(s, "kind", x.kind, "experiment");
    read(s, "n_pairs", x.n_pairs, "experiment");
    read_list(s, "seeds", x.seeds, "experiment");
    read(s, "query_length", x.query_length, "experiment");
    read(s, "prompt_length", x.prompt_length, "experiment");
    read_list(s, "sweep", x.sweep, "experiment");
    read(s, "model_path", x.model_path, "experiment");
    if (s.contains("attack") && !s["attack"].is_null()) x.attack = read_attack(s["attack"], "experiment.attack");
  }
  validate(cfg);
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  const auto& p = cfg.provider;
  const auto& d = cfg.detection;
  const auto& c = cfg.calibration;
  const auto& x = cfg.experiment;
  json attacks = json::array();
  for (const auto& a : c.attacks) attacks.push_back(attack_to_json(a));
  return {{"seed", cfg.seed},
          {"provider",
           {{"order", p.order},
            {"vocab_size", p.vocab_size},
            {"corpus_path", p.corpus_path},
            {"temperature", p.temperature},
            {"smoothing", p.smoothing},
            {"teacher_sequences", p.teacher_sequences},
            {"teacher_length", p.teacher_length},
            {"teacher_concentration", p.teacher_concentration},
            {"scoring_order", p.scoring_order},
            {"scoring_sequences", p.scoring_sequences},
            {"scoring_length", p.scoring_length}}},
          {"scheme", scheme_to_json(cfg.scheme)},
          {"detection",
           {{"N", d.n_refs},
            {"prefix_len", d.prefix_len},
            {"gen_len", d.gen_len},
            {"k", d.k},
            {"d_prime", d.d_prime},
            {"alpha_shrink", d.alpha_shrink},
            {"lambda", d.lambda},
            {"epsilon", d.epsilon},
            {"feature_dim", d.feature_dim},
            {"n_max", d.n_max}}},
          {"calibration",
           {{"alpha_fpr", c.alpha_fpr},
            {"n_val_pairs", c.n_val_pairs},
            {"n_benign", c.n_benign},
            {"attacks", attacks},
            {"epochs", c.epochs},
            {"lr", c.lr},
            {"l2", c.l2}}},
          {"experiment",
           {{"kind", x.kind},
            {"n_pairs", x.n_pairs},
            {"seeds", x.seeds},
            {"query_length", x.query_length},
            {"prompt_length", x.prompt_length},
            {"attack", x.attack ? attack_to_json(*x.attack) : json(nullptr)},
            {"sweep", x.sweep},
            {"model_path", x.model_path}}}};
}

std::string canonical_dump(const ExperimentConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed config file '" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override '" + assignment + "' must look like path.to.field=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("override '" + assignment + "' has an empty path component");
    if (!node->is_object()) {
      if (!node->is_null()) throw std::invalid_argument("override '" + path + "' descends into a non-object");
      *node = json::object();
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

QuerySpec query_spec(const ExperimentConfig& cfg) {
  return {cfg.experiment.prompt_length, cfg.experiment.query_length};
}

MeasureParams measure_params(const ExperimentConfig& cfg) {
  MeasureParams m;
  m.k = cfg.detection.k;
  m.d_prime = cfg.detection.d_prime;
  m.alpha_shrink = cfg.detection.alpha_shrink;
  m.lambda = cfg.detection.lambda;
  m.epsilon = cfg.detection.epsilon;
  return m;
}

CalibrationSpec calibration_spec(const ExperimentConfig& cfg) {
  CalibrationSpec spec;
  spec.alpha_fpr = cfg.calibration.alpha_fpr;
  spec.n_val_pairs = cfg.calibration.n_val_pairs;
  spec.n_benign = cfg.calibration.n_benign;
  spec.attacks = cfg.calibration.attacks;
  spec.fit.epochs = cfg.calibration.epochs;
  spec.fit.lr = cfg.calibration.lr;
  spec.fit.l2 = cfg.calibration.l2;
  spec.queries = query_spec(cfg);
  return spec;
}

AuditSetup make_setup(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto& p = cfg.provider;
  std::vector<TokenSeq> corpus;
  if (p.corpus_path.empty()) {
    TeacherConfig teacher;
    teacher.vocab_size = p.vocab_size;
    teacher.order = p.order;
    teacher.sequences = p.teacher_sequences;
    teacher.length = p.teacher_length;
    teacher.concentration = p.teacher_concentration;
    corpus = synthetic_corpus(teacher, derive_seed(cfg.seed, "teacher"));
  } else {
    for (const auto& rec : read_records(p.corpus_path)) {
      if (rec.completion.vocab_size != p.vocab_size)
        throw std::invalid_argument("provider.corpus_path: record '" + rec.id + "' has vocab_size " +
                                    std::to_string(rec.completion.vocab_size) + ", expected " +
                                    std::to_string(p.vocab_size));
      TokenSeq seq{rec.prompt.ids, p.vocab_size};
      seq.ids.insert(seq.ids.end(), rec.completion.ids.begin(), rec.completion.ids.end());
      corpus.push_back(std::move(seq));
    }
    if (corpus.empty()) throw std::invalid_argument("provider.corpus_path: no records");
  }

  Provider provider{train_markov(corpus, p.order, p.smoothing, p.temperature), cfg.scheme};

  // The auditor only sees text, so its scoring model learns from the
  // provider's unwatermarked output.
  std::vector<TokenSeq> observed;
  observed.reserve(p.scoring_sequences);
  const std::uint64_t scoring_seed = derive_seed(cfg.seed, "scoring-corpus");
  for (std::size_t i = 0; i < p.scoring_sequences; ++i)
    observed.push_back(sample_prompt(provider.model, p.scoring_length, derive_seed(scoring_seed, "seq", i)));
  MarkovModel scoring = train_markov(observed, p.scoring_order, p.smoothing);

  const auto& d = cfg.detection;
  return AuditSetup{std::move(provider), std::move(scoring), ngram_featurizer(d.feature_dim, d.n_max),
                    BundleParams{d.n_refs, d.prefix_len, d.gen_len}, measure_params(cfg)};
}

}  // namespace wmaudit
