// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment configuration: a JSON document with one section per concern,
// dotted-path overrides, validation that names the offending field, and a
// canonical serialized form.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wmaudit/attacks.hpp"
#include "wmaudit/audit.hpp"
#include "wmaudit/ensemble.hpp"
#include "wmaudit/provider.hpp"

namespace wmaudit {

struct ProviderConfig {
  std::size_t order = 2;
  std::size_t vocab_size = 64;
  std::string corpus_path;  // JSONL GenRecords; empty: synthetic teacher corpus
  double temperature = 1.0;
  double smoothing = 0.1;
  std::size_t teacher_sequences = 400;
  std::size_t teacher_length = 300;
  double teacher_concentration = 0.02;
  // The auditor's scoring model, trained on unwatermarked provider output.
  std::size_t scoring_order = 2;
  std::size_t scoring_sequences = 200;
  std::size_t scoring_length = 200;
};

struct DetectionConfig {
  std::size_t n_refs = 16;  // "N" in the file
  std::size_t prefix_len = 50;
  std::size_t gen_len = 0;
  std::size_t k = 0;
  std::size_t d_prime = 0;
  double alpha_shrink = 0.05;
  double lambda = 0.6;
  double epsilon = 1e-6;
  std::size_t feature_dim = 256;
  std::size_t n_max = 3;
};

struct CalibrationConfig {
  double alpha_fpr = 0.05;
  std::size_t n_val_pairs = 100;
  std::size_t n_benign = 200;
  std::vector<AttackConfig> attacks;
  std::size_t epochs = 3000;
  double lr = 1.0;
  double l2 = 1e-3;
};

inline constexpr const char* kExperimentKinds[] = {"detectability", "robustness", "sweep_N",
                                                   "sweep_length", "ablation_leave_one_out"};

struct ExperimentSection {
  std::string kind = "detectability";
  std::size_t n_pairs = 200;
  std::vector<std::uint64_t> seeds{0};
  std::size_t query_length = 200;
  std::size_t prompt_length = 30;
  std::optional<AttackConfig> attack;  // robustness only
  std::vector<std::size_t> sweep;      // N values or lengths
  std::string model_path;              // optional pre-fitted model; skips calibration
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ProviderConfig provider;
  SchemeConfig scheme = KgwScheme{};
  DetectionConfig detection;
  CalibrationConfig calibration;
  ExperimentSection experiment;
};

/// Throws std::invalid_argument naming the first out-of-domain field.
void validate(const ExperimentConfig& cfg);

/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Sorted keys, two-space indent, trailing newline.
std::string canonical_dump(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

QuerySpec query_spec(const ExperimentConfig& cfg);
CalibrationSpec calibration_spec(const ExperimentConfig& cfg);
MeasureParams measure_params(const ExperimentConfig& cfg);

/// Trains the provider (synthetic teacher corpus or corpus_path) and the
/// auditor's scoring model from cfg.seed.
AuditSetup make_setup(const ExperimentConfig& cfg);

}  // namespace wmaudit
