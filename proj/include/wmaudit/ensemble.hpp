// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

// Logistic fusion of the four measurement scores, robust calibration on an
// attack-augmented validation set, and FPR-controlled thresholding.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "wmaudit/attacks.hpp"
#include "wmaudit/audit.hpp"
#include "wmaudit/measurements.hpp"

namespace wmaudit {

struct EnsembleModel {
  std::array<double, 4> w{};
  double b = 0.0;
  double tau = 0.5;
  double alpha_fpr = 0.05;
  MeasureParams meta;  // measurement settings the weights were fitted under
};

struct LabeledScore {
  ScoreVector scores;
  bool watermarked = false;
  bool perturbed = false;
  RawScores raw;
};

struct FitOptions {
  std::size_t epochs = 3000;
  double lr = 1.0;
  double l2 = 1e-3;
  /// Features left out (false) keep a zero weight; used by leave-one-out ablation.
  std::array<bool, 4> active{true, true, true, true};
};

struct FitResult {
  std::array<double, 4> w{};
  double b = 0.0;
  std::vector<double> loss;  // objective before each epoch's update, then the final value
};

/// Mean binary cross-entropy of sigma(w.a + b) plus (l2 / 2) ||w||^2.
double ensemble_loss(std::span<const LabeledScore> data, const std::array<double, 4>& w, double b,
                     double l2);

/// Full-batch gradient descent from zero. Throws std::invalid_argument when
/// the data holds a single class or epochs == 0.
FitResult fit_ensemble(std::span<const LabeledScore> data, const FitOptions& options = {});

double ensemble_score(const EnsembleModel& model, const ScoreVector& a);

/// Smallest observed benign score gamma with FPR(gamma) = #{s >= gamma} / M
/// <= alpha; when no observed score qualifies, the next double above the
/// maximum (FPR 0). Throws on empty input or alpha outside (0,1).
double calibrate_threshold(std::span<const double> benign_scores, double alpha);

double empirical_fpr(std::span<const double> benign_scores, double tau);

/// ensemble_score(model, a) >= model.tau.
bool decide(const EnsembleModel& model, const ScoreVector& a);

/// 1 / (1.4826 * MAD). Falls back to 1 when the MAD is zero or the input empty.
double mad_temperature(std::span<const double> deltas);

struct Temperatures {
  double beta_mah = 1.0;
  double beta_ene = 1.0;
};

/// MAD temperatures of delta_mah / delta_ene over entries with geometry enabled.
Temperatures fit_temperatures(std::span<const LabeledScore> data);

void rescore(std::span<LabeledScore> data, const Temperatures& temps);

/// n_pairs clean and n_pairs watermarked queries, plus one attacked copy of
/// every watermarked query per attack (label kept, perturbed = true). Scores
/// use the setup's current temperatures; `raw` is kept for refitting.
std::vector<LabeledScore> build_validation_set(const AuditSetup& setup,
                                               std::span<const AttackConfig> attacks,
                                               std::size_t n_pairs, const QuerySpec& queries,
                                               std::uint64_t seed);

/// Validation entries from supplied records, labeled by their watermarked
/// flag; each watermarked record also gets one attacked copy per attack.
std::vector<LabeledScore> validation_from_records(const AuditSetup& setup, std::span<const GenRecord> records,
                                                  std::span<const AttackConfig> attacks, std::uint64_t seed);

struct CalibrationSpec {
  double alpha_fpr = 0.05;
  std::size_t n_val_pairs = 100;
  std::size_t n_benign = 200;
  std::vector<AttackConfig> attacks;
  FitOptions fit;
  QuerySpec queries;
  bool fit_temperatures = true;
};

struct CalibrationResult {
  EnsembleModel model;
  FitResult fit;
  std::vector<LabeledScore> validation;
  std::vector<RawScores> benign_raw;
  std::vector<double> benign_scores;
  double achieved_fpr = 0.0;
};

/// Temperatures, weights, then tau on fresh unwatermarked generations.
CalibrationResult calibrate(const AuditSetup& setup, const CalibrationSpec& spec, std::uint64_t seed);

/// As above with a caller-supplied validation set (n_val_pairs and attacks
/// in `spec` are ignored).
CalibrationResult calibrate(const AuditSetup& setup, const CalibrationSpec& spec,
                            std::vector<LabeledScore> validation, std::uint64_t seed);

/// Refits weights and tau on the data already held by `base`, keeping its
/// temperatures. Used to drop features without re-measuring.
CalibrationResult refit(const CalibrationResult& base, const FitOptions& fit);

/// Model file: {w:[4], b, tau, alpha, meta:{k, d_prime, alpha_shrink,
/// beta_mah, beta_ene, lambda, epsilon}}.
nlohmann::json model_to_json(const EnsembleModel& model);
EnsembleModel model_from_json(const nlohmann::json& j);
void save_model(const std::filesystem::path& path, const EnsembleModel& model);
EnsembleModel load_model(const std::filesystem::path& path);

}  // namespace wmaudit
