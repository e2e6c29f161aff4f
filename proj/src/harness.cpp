// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include "wmaudit/harness.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <stdexcept>

#include "wmaudit/parallel.hpp"

namespace wmaudit {

using nlohmann::json;

namespace {

json scores_to_json(const ScoreVector& s) {
  return {{"a_loc", s.a_loc}, {"a_mah", s.a_mah}, {"a_ene", s.a_ene}, {"a_ada", s.a_ada}};
}

json setting_to_json(const SettingReport& r) {
  json per_seed = json::array();
  for (const auto& s : r.per_seed) {
    json entry = metrics_to_json(s.metrics);
    entry["seed"] = s.seed;
    entry["model"] = model_to_json(s.model);
    entry["calibration_fpr"] = s.calibration_fpr;
    per_seed.push_back(std::move(entry));
  }
  return {{"setting", r.setting},
          {"mean", {{"tpr", r.mean_tpr}, {"tnr", r.mean_tnr}, {"f1", r.mean_f1}, {"auroc", r.mean_auroc}}},
          {"per_seed", per_seed}};
}

void summarize(SettingReport& r) {
  const double n = static_cast<double>(r.per_seed.size());
  r.mean_tpr = r.mean_tnr = r.mean_f1 = r.mean_auroc = 0.0;
  for (const auto& s : r.per_seed) {
    r.mean_tpr += s.metrics.tpr / n;
    r.mean_tnr += s.metrics.tnr / n;
    r.mean_f1 += s.metrics.f1 / n;
    r.mean_auroc += s.metrics.auroc / n;
  }
}

AuditSetup with_model_params(const AuditSetup& setup, const EnsembleModel& model) {
  AuditSetup s = setup;
  s.measure = model.meta;
  return s;
}

}  // namespace

json result_to_json(const DetectionResult& r) {
  return {{"id", r.id},
          {"setting", r.setting},
          {"seed", r.seed},
          {"scores", scores_to_json(r.scores)},
          {"ensemble", r.ensemble},
          {"verdict", r.verdict},
          {"truth", r.truth},
          {"attack", r.attack ? attack_to_json(*r.attack) : json(nullptr)}};
}

DetectionResult detect(const AuditSetup& setup, const EnsembleModel& model, std::span<const TokenId> query,
                       std::uint64_t seed, std::string id) {
  const auto raw = measure_query(with_model_params(setup, model), query, seed);
  DetectionResult r;
  r.id = std::move(id);
  r.seed = seed;
  r.scores = normalize_scores(raw, model.meta.beta_mah, model.meta.beta_ene);
  r.ensemble = ensemble_score(model, r.scores);
  r.verdict = r.ensemble >= model.tau;
  return r;
}

json metrics_to_json(const MetricsReport& m) {
  json roc = json::array();
  for (const auto& [fpr, tpr] : m.roc) roc.push_back({fpr, tpr});
  return {{"tpr", m.tpr},       {"tnr", m.tnr},     {"f1", m.f1},       {"auroc", m.auroc},
          {"threshold", m.threshold}, {"n_pos", m.n_pos}, {"n_neg", m.n_neg}, {"roc", roc}};
}

MetricsReport roc_auc(std::span<const double> scores, const std::vector<bool>& labels, std::optional<double> tau) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: scores and labels differ in length");
  MetricsReport m;
  m.n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  m.n_neg = labels.size() - m.n_pos;
  if (m.n_pos == 0 || m.n_neg == 0) throw std::invalid_argument("roc_auc: both classes are required");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double pos = static_cast<double>(m.n_pos);
  const double neg = static_cast<double>(m.n_neg);
  m.roc.emplace_back(0.0, 0.0);
  double tp = 0.0, fp = 0.0, area = 0.0;
  double best_f1 = -1.0, best_cut = scores[order.front()];
  for (std::size_t i = 0; i < order.size();) {
    const double cut = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == cut; ++i) (labels[order[i]] ? tp : fp) += 1.0;
    const auto [prev_fpr, prev_tpr] = m.roc.back();
    const double fpr = fp / neg, tpr = tp / pos;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    m.roc.emplace_back(fpr, tpr);
    const double f1 = 2.0 * tp / (2.0 * tp + fp + (pos - tp));
    if (f1 > best_f1) {
      best_f1 = f1;
      best_cut = cut;
    }
  }
  m.auroc = area;
  m.f1 = best_f1;
  m.threshold = tau.value_or(best_cut);

  double hit_pos = 0.0, hit_neg = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= m.threshold) (labels[i] ? hit_pos : hit_neg) += 1.0;
  m.tpr = hit_pos / pos;
  m.tnr = 1.0 - hit_neg / neg;
  return m;
}

TestSet measure_test_set(const AuditSetup& setup, const QuerySpec& queries, std::size_t n_pairs,
                         const std::optional<AttackConfig>& attack, std::uint64_t seed) {
  if (n_pairs < 1) throw std::invalid_argument("measure_test_set: n_pairs must be >= 1");
  TestSet test;
  test.attack = attack;
  test.raw = parallel_map(2 * n_pairs, [&](std::size_t task) {
    const bool wm = task >= n_pairs;
    const std::size_t i = task % n_pairs;
    const auto query = make_query(setup.provider, queries, wm, derive_seed(seed, wm ? "test-wm" : "test-clean", i));
    std::vector<TokenId> tokens = query.completion.ids;
    if (wm && attack) tokens = apply_attack(*attack, tokens, setup.provider.model, derive_seed(seed, "test-attack", i));
    return measure_query(setup, tokens, derive_seed(seed, "test-bundle", task));
  });
  for (std::size_t task = 0; task < 2 * n_pairs; ++task) {
    const bool wm = task >= n_pairs;
    test.truth.push_back(wm);
    test.ids.push_back((wm ? "wm-" : "clean-") + std::to_string(task % n_pairs));
  }
  return test;
}

MetricsReport evaluate(const TestSet& test, const EnsembleModel& model, const std::string& setting,
                       std::uint64_t seed, std::vector<DetectionResult>& rows) {
  std::vector<double> scores;
  for (std::size_t i = 0; i < test.raw.size(); ++i) {
    DetectionResult r;
    r.id = test.ids[i];
    r.setting = setting;
    r.seed = seed;
    r.scores = normalize_scores(test.raw[i], model.meta.beta_mah, model.meta.beta_ene);
    r.ensemble = ensemble_score(model, r.scores);
    r.verdict = r.ensemble >= model.tau;
    r.truth = test.truth[i];
    if (r.truth) r.attack = test.attack;
    scores.push_back(r.ensemble);
    rows.push_back(std::move(r));
  }
  return roc_auc(scores, test.truth, model.tau);
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto& x = cfg.experiment;
  if (x.kind == "ablation_leave_one_out" && !x.model_path.empty())
    throw std::invalid_argument("experiment.model_path cannot be used with ablation_leave_one_out (it refits)");
  std::optional<EnsembleModel> fixed;
  if (!x.model_path.empty()) fixed = load_model(x.model_path);

  const AuditSetup base = make_setup(cfg);
  ExperimentOutput out;
  out.kind = x.kind;

  // One arm: calibrate (unless a model was supplied), then measure and score.
  auto run_arm = [&](const AuditSetup& setup, const QuerySpec& queries, const std::optional<AttackConfig>& attack,
                     const std::string& setting, SettingReport& report) {
    for (std::uint64_t seed : x.seeds) {
      SeedMetrics sm;
      sm.seed = seed;
      AuditSetup arm = setup;
      if (fixed) {
        sm.model = *fixed;
      } else {
        CalibrationSpec spec = calibration_spec(cfg);
        spec.queries = queries;
        const auto cal = calibrate(setup, spec, derive_seed(seed, "calibration"));
        sm.model = cal.model;
        sm.calibration_fpr = cal.achieved_fpr;
      }
      arm.measure = sm.model.meta;
      const auto test = measure_test_set(arm, queries, x.n_pairs, attack, derive_seed(seed, "test"));
      sm.metrics = evaluate(test, sm.model, setting, seed, out.rows);
      report.per_seed.push_back(std::move(sm));
    }
    report.setting = setting;
    summarize(report);
  };

  const QuerySpec queries = query_spec(cfg);
  if (x.kind == "detectability" || x.kind == "robustness") {
    SettingReport r;
    const auto attack = x.kind == "robustness" ? x.attack : std::nullopt;
    run_arm(base, queries, attack, attack ? attack->name() : scheme_name(cfg.scheme), r);
    out.reports.push_back(std::move(r));
  } else if (x.kind == "sweep_N") {
    for (std::size_t n : x.sweep) {
      AuditSetup setup = base;
      setup.bundle.n_refs = n;
      SettingReport r;
      run_arm(setup, queries, std::nullopt, "N=" + std::to_string(n), r);
      out.reports.push_back(std::move(r));
    }
  } else if (x.kind == "sweep_length") {
    for (std::size_t len : x.sweep) {
      QuerySpec q = queries;
      q.length = len;
      SettingReport r;
      run_arm(base, q, std::nullopt, "length=" + std::to_string(len), r);
      out.reports.push_back(std::move(r));
    }
  } else {
    SettingReport full;
    full.setting = "all";
    std::vector<SettingReport> dropped(4);
    for (std::size_t m = 0; m < 4; ++m) dropped[m].setting = std::string("without_") + kScoreNames[m];
    for (std::uint64_t seed : x.seeds) {
      const auto cal = calibrate(base, calibration_spec(cfg), derive_seed(seed, "calibration"));
      AuditSetup arm = base;
      arm.measure = cal.model.meta;
      const auto test = measure_test_set(arm, queries, x.n_pairs, std::nullopt, derive_seed(seed, "test"));
      full.per_seed.push_back({seed, evaluate(test, cal.model, full.setting, seed, out.rows), cal.model,
                               cal.achieved_fpr});
      for (std::size_t m = 0; m < 4; ++m) {
        FitOptions fit = calibration_spec(cfg).fit;
        fit.active[m] = false;
        const auto re = refit(cal, fit);
        dropped[m].per_seed.push_back(
            {seed, evaluate(test, re.model, dropped[m].setting, seed, out.rows), re.model, re.achieved_fpr});
      }
    }
    summarize(full);
    for (auto& r : dropped) summarize(r);
    out.baseline = std::move(full);
    out.reports = std::move(dropped);
  }
  return out;
}

json report_to_json(const ExperimentOutput& out, const ExperimentConfig& cfg) {
  json reports = json::array();
  for (const auto& r : out.reports) reports.push_back(setting_to_json(r));
  json j = {{"kind", out.kind}, {"config", config_to_json(cfg)}, {"reports", reports}};
  if (out.baseline) j["baseline"] = setting_to_json(*out.baseline);
  return j;
}

void write_artifacts(const ExperimentOutput& out, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [](const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
    return f;
  };
  {
    auto f = open(dir / "results.jsonl");
    for (const auto& r : out.rows) f << result_to_json(r).dump() << '\n';
  }
  {
    auto f = open(dir / "report.json");
    f << report_to_json(out, cfg).dump(2) << '\n';
  }
  {
    auto f = open(dir / "roc.csv");
    f << "fpr,tpr\n" << std::setprecision(17);
    if (!out.reports.empty() && !out.reports.front().per_seed.empty())
      for (const auto& [fpr, tpr] : out.reports.front().per_seed.front().metrics.roc) f << fpr << ',' << tpr << '\n';
  }
}

}  // namespace wmaudit
