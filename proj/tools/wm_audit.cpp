// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

// wm_audit: generate paired corpora, calibrate the detector, audit a query,
// and run experiments.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wmaudit/config.hpp"
#include "wmaudit/ensemble.hpp"
#include "wmaudit/harness.hpp"
#include "wmaudit/records.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wmaudit;

namespace {

constexpr int kExitClean = 0;
constexpr int kExitError = 1;
constexpr int kExitWatermarked = 2;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  bool json = false;
  std::vector<std::string> overrides;
};

ExperimentConfig resolve_config(const GlobalOptions& g) {
  json doc = json::object();
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw std::runtime_error("cannot open config file '" + g.config_path + "'");
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("malformed config file '" + g.config_path + "': " + e.what());
    }
  }
  for (const auto& o : g.overrides) apply_override(doc, o);
  if (g.seed) doc["seed"] = *g.seed;
  return config_from_json(doc);
}

std::vector<TokenId> parse_query(const std::string& text, std::size_t vocab_size) {
  std::vector<TokenId> ids;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    std::istringstream in(text);
    const auto records = read_records(in);
    if (records.empty()) throw std::invalid_argument("query file holds no record");
    ids = records.front().completion.ids;
  } else {
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) throw std::invalid_argument("malformed query: '" + tok + "' is not a token id");
      ids.push_back(static_cast<TokenId>(v));
      if (v != ids.back()) throw std::invalid_argument("malformed query: token id " + tok + " out of range");
    }
  }
  if (ids.empty()) throw std::invalid_argument("malformed query: no tokens");
  TokenSeq{ids, vocab_size}.validate();
  return ids;
}

int cmd_gen(const GlobalOptions& g, std::optional<std::size_t> n_pairs_flag) {
  const auto cfg = resolve_config(g);
  if (!has_watermark(cfg.scheme))
    throw std::invalid_argument("scheme: gen needs a watermarking scheme for the watermarked half (got none)");
  const std::size_t n_pairs = n_pairs_flag.value_or(cfg.experiment.n_pairs);
  const auto setup = make_setup(cfg);
  const auto queries = query_spec(cfg);
  std::vector<GenRecord> records;
  const std::uint64_t root = derive_seed(cfg.seed, "gen");
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const auto prompt = sample_prompt(setup.provider.model, queries.prompt_len, derive_seed(root, "prompt", i));
    for (bool wm : {false, true}) {
      const std::string id = "pair-" + std::to_string(i) + (wm ? "-wm" : "-clean");
      records.push_back(generate(setup.provider.model, prompt.ids, queries.length, setup.provider.scheme, wm,
                                 derive_seed(root, wm ? "wm" : "clean", i), id));
    }
  }
  fs::create_directories(g.out);
  const fs::path path = fs::path(g.out) / "corpus.jsonl";
  write_records(path, records);
  if (g.json) {
    std::cout << json{{"path", path.string()}, {"records", records.size()}, {"pairs", n_pairs}}.dump() << '\n';
  } else {
    std::cout << "wrote " << records.size() << " records (" << n_pairs << " clean, " << n_pairs
              << " watermarked) to " << path.string() << '\n';
  }
  return kExitClean;
}

int cmd_calibrate(const GlobalOptions& g, const std::vector<std::string>& data_paths, std::string model_path) {
  const auto cfg = resolve_config(g);
  const auto setup = make_setup(cfg);
  const auto spec = calibration_spec(cfg);
  if (spec.attacks.empty())
    std::cerr << "warning: calibration.attacks is empty; calibrating on clean pairs only\n";

  CalibrationResult cal;
  const std::uint64_t seed = derive_seed(cfg.seed, "calibration");
  if (data_paths.empty()) {
    cal = calibrate(setup, spec, seed);
  } else {
    std::vector<GenRecord> records;
    for (const auto& p : data_paths) {
      auto more = read_records(fs::path(p));
      records.insert(records.end(), more.begin(), more.end());
    }
    cal = calibrate(setup, spec, validation_from_records(setup, records, spec.attacks, derive_seed(seed, "records")),
                    seed);
  }

  if (model_path.empty()) model_path = (fs::path(g.out) / "model.json").string();
  if (const auto parent = fs::path(model_path).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_model(model_path, cal.model);

  const auto& loss = cal.fit.loss;
  if (g.json) {
    std::cout << json{{"model", model_path},
                      {"validation", cal.validation.size()},
                      {"loss_first", loss.front()},
                      {"loss_final", loss.back()},
                      {"tau", cal.model.tau},
                      {"calibration_fpr", cal.achieved_fpr}}
                     .dump()
              << '\n';
  } else {
    std::cout << "validation entries: " << cal.validation.size() << '\n';
    const std::size_t epochs = loss.size() - 1;
    const std::size_t step = std::max<std::size_t>(1, epochs / 10);
    for (std::size_t e = 0; e <= epochs; e += step)
      std::cout << "  epoch " << std::setw(6) << e << "  loss " << std::setprecision(6) << loss[e] << '\n';
    if (epochs % step != 0) std::cout << "  epoch " << std::setw(6) << epochs << "  loss " << loss.back() << '\n';
    std::cout << "weights:";
    for (std::size_t i = 0; i < 4; ++i) std::cout << ' ' << kScoreNames[i] << '=' << cal.model.w[i];
    std::cout << " b=" << cal.model.b << '\n'
              << "tau=" << std::setprecision(9) << cal.model.tau << " (alpha " << cal.model.alpha_fpr
              << ", calibration FPR " << cal.achieved_fpr << ")\n"
              << "model written to " << model_path << '\n';
  }
  return kExitClean;
}

int cmd_detect(const GlobalOptions& g, const std::string& model_path, const std::string& query_file,
               const std::string& tokens) {
  const auto cfg = resolve_config(g);
  const auto model = load_model(model_path);
  std::string text = tokens;
  if (!query_file.empty()) {
    std::ifstream in(query_file);
    if (!in) throw std::runtime_error("cannot open query file '" + query_file + "'");
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  const auto query = parse_query(text, cfg.provider.vocab_size);
  if (query.size() < cfg.detection.prefix_len)
    throw std::invalid_argument("query has " + std::to_string(query.size()) +
                                " tokens, fewer than detection.prefix_len = " +
                                std::to_string(cfg.detection.prefix_len));
  const auto setup = make_setup(cfg);
  const auto r = detect(setup, model, query, derive_seed(cfg.seed, "detect"));
  const json out = {{"scores",
                     {{"a_loc", r.scores.a_loc},
                      {"a_mah", r.scores.a_mah},
                      {"a_ene", r.scores.a_ene},
                      {"a_ada", r.scores.a_ada}}},
                    {"ensemble", r.ensemble},
                    {"tau", model.tau},
                    {"verdict", r.verdict ? "watermarked" : "clean"}};
  std::cout << (g.json ? out.dump() : out.dump(2)) << '\n';
  return r.verdict ? kExitWatermarked : kExitClean;
}

int cmd_experiment(const GlobalOptions& g) {
  const auto cfg = resolve_config(g);
  const auto out = run_experiment(cfg);
  write_artifacts(out, cfg, g.out);
  if (g.json) {
    json summary = json::array();
    for (const auto& r : out.reports)
      summary.push_back({{"setting", r.setting}, {"auroc", r.mean_auroc}, {"f1", r.mean_f1},
                         {"tpr", r.mean_tpr}, {"tnr", r.mean_tnr}});
    std::cout << json{{"kind", out.kind}, {"out", g.out}, {"reports", summary}}.dump() << '\n';
  } else {
    std::cout << out.kind << " (" << cfg.experiment.seeds.size() << " seed(s))\n";
    auto line = [](const SettingReport& r) {
      std::cout << "  " << std::left << std::setw(22) << r.setting << std::right << std::fixed << std::setprecision(4)
                << " auroc " << r.mean_auroc << "  f1 " << r.mean_f1 << "  tpr " << r.mean_tpr << "  tnr "
                << r.mean_tnr << '\n';
    };
    if (out.baseline) line(*out.baseline);
    for (const auto& r : out.reports) line(r);
    std::cout << "artifacts in " << g.out << '\n';
  }
  return kExitClean;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box watermark audit toolkit"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed_value, "Root seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--json", g.json, "Machine-readable single-line output");
  app.add_option("--set", g.overrides, "Config override path.to.field=value (repeatable)");
  app.fallthrough();

  auto* gen = app.add_subcommand("gen", "Write paired clean/watermarked completions as JSONL");
  std::optional<std::size_t> n_pairs;
  gen->add_option("--n-pairs", n_pairs, "Number of prompt pairs (default: experiment.n_pairs)");

  auto* cal = app.add_subcommand("calibrate", "Fit ensemble weights and the FPR threshold");
  std::vector<std::string> data_paths;
  std::string model_out;
  cal->add_option("--data", data_paths, "Labeled JSONL records to calibrate on")->check(CLI::ExistingFile);
  cal->add_option("--model", model_out, "Model output path (default: OUT/model.json)");

  auto* det = app.add_subcommand("detect", "Audit one query; exit 0 clean, 2 watermarked, 1 error");
  std::string model_in, query_file, tokens;
  det->add_option("--model", model_in, "Fitted model JSON")->required();
  auto* qf = det->add_option("--query", query_file, "Query file: token ids or a JSONL record");
  auto* qt = det->add_option("--tokens", tokens, "Query token ids, space separated");
  qf->excludes(qt);

  auto* exp = app.add_subcommand("experiment", "Run the configured experiment and write its artifacts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitClean : kExitError;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    if (*gen) return cmd_gen(g, n_pairs);
    if (*cal) return cmd_calibrate(g, data_paths, model_out);
    if (*det) {
      if (query_file.empty() && tokens.empty()) throw std::invalid_argument("detect needs --query or --tokens");
      return cmd_detect(g, model_in, query_file, tokens);
    }
    if (*exp) return cmd_experiment(g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
