// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end detection and the experiment runner: paired test sets, per-query
// verdicts, ROC / AUROC / best-F1 metrics, and the artifact files.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "wmaudit/attacks.hpp"
#include "wmaudit/audit.hpp"
#include "wmaudit/config.hpp"
#include "wmaudit/ensemble.hpp"

namespace wmaudit {

struct DetectionResult {
  std::string id;
  std::string setting;  // experiment arm the row belongs to
  std::uint64_t seed = 0;
  ScoreVector scores;
  double ensemble = 0.5;
  bool verdict = false;
  bool truth = false;
  std::optional<AttackConfig> attack;
};

nlohmann::json result_to_json(const DetectionResult& r);

/// Builds the reference bundle for `query`, scores it with the measurement
/// settings stored in `model`, and applies the threshold.
/// Throws std::invalid_argument when the query is shorter than prefix_len.
DetectionResult detect(const AuditSetup& setup, const EnsembleModel& model, std::span<const TokenId> query,
                       std::uint64_t seed, std::string id = {});

struct MetricsReport {
  double tpr = 0.0;
  double tnr = 0.0;
  double f1 = 0.0;  // best F1 over observed thresholds
  double auroc = 0.5;
  double threshold = 0.0;  // where tpr / tnr were read: tau if given, else the best-F1 cut
  std::vector<std::pair<double, double>> roc;  // (fpr, tpr), (0,0) to (1,1)
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

nlohmann::json metrics_to_json(const MetricsReport& m);

/// ROC over every distinct score cut "score >= t"; tied scores move together,
/// so the trapezoid area counts ties as half-concordant. Throws
/// std::invalid_argument on size mismatch or a single class.
MetricsReport roc_auc(std::span<const double> scores, const std::vector<bool>& labels,
                      std::optional<double> tau = std::nullopt);

/// Raw measurements of a paired test set: n_pairs clean then n_pairs
/// watermarked queries, the latter attacked when `attack` is set.
struct TestSet {
  std::vector<std::string> ids;
  std::vector<bool> truth;
  std::vector<RawScores> raw;
  std::optional<AttackConfig> attack;
};

TestSet measure_test_set(const AuditSetup& setup, const QuerySpec& queries, std::size_t n_pairs,
                         const std::optional<AttackConfig>& attack, std::uint64_t seed);

/// Scores a measured test set under `model`; rows are appended to `rows`.
MetricsReport evaluate(const TestSet& test, const EnsembleModel& model, const std::string& setting,
                       std::uint64_t seed, std::vector<DetectionResult>& rows);

struct SeedMetrics {
  std::uint64_t seed = 0;
  MetricsReport metrics;
  EnsembleModel model;
  double calibration_fpr = 0.0;
};

struct SettingReport {
  std::string setting;
  std::vector<SeedMetrics> per_seed;
  double mean_tpr = 0.0;
  double mean_tnr = 0.0;
  double mean_f1 = 0.0;
  double mean_auroc = 0.0;
};

struct ExperimentOutput {
  std::string kind;
  std::vector<SettingReport> reports;   // leave-one-out: exactly one per removed module
  std::optional<SettingReport> baseline;  // leave-one-out: all four modules
  std::vector<DetectionResult> rows;
};

/// Runs cfg.experiment.kind. The provider is fixed by cfg.seed; every entry
/// of experiment.seeds draws its own calibration and test sets.
ExperimentOutput run_experiment(const ExperimentConfig& cfg);

nlohmann::json report_to_json(const ExperimentOutput& out, const ExperimentConfig& cfg);

/// Writes results.jsonl, report.json and roc.csv (first setting, first seed).
void write_artifacts(const ExperimentOutput& out, const ExperimentConfig& cfg, const std::filesystem::path& dir);

}  // namespace wmaudit
