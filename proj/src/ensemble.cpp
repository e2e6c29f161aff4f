// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include "wmaudit/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>

#include "wmaudit/parallel.hpp"

namespace wmaudit {

namespace {

double logit_of(const std::array<double, 4>& w, double b, const ScoreVector& s) {
  const auto a = s.as_array();
  double z = b;
  for (std::size_t i = 0; i < 4; ++i) z += w[i] * a[i];
  return z;
}

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double ensemble_loss(std::span<const LabeledScore> data, const std::array<double, 4>& w, double b,
                     double l2) {
  double total = 0.0;
  for (const auto& d : data) {
    const double z = logit_of(w, b, d.scores);
    total += softplus(z) - (d.watermarked ? z : 0.0);
  }
  double penalty = 0.0;
  for (double wi : w) penalty += wi * wi;
  return total / static_cast<double>(data.size()) + 0.5 * l2 * penalty;
}

FitResult fit_ensemble(std::span<const LabeledScore> data, const FitOptions& options) {
  if (options.epochs < 1) throw std::invalid_argument("fit_ensemble: epochs must be >= 1");
  if (!(options.lr > 0.0)) throw std::invalid_argument("fit_ensemble: lr must be positive");
  if (!(options.l2 >= 0.0)) throw std::invalid_argument("fit_ensemble: l2 must be non-negative");
  const auto positives = std::count_if(data.begin(), data.end(), [](const auto& d) { return d.watermarked; });
  if (positives == 0 || static_cast<std::size_t>(positives) == data.size())
    throw std::invalid_argument("fit_ensemble: validation data must contain both classes");

  const double n = static_cast<double>(data.size());
  FitResult fit;
  fit.loss.reserve(options.epochs + 1);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    fit.loss.push_back(ensemble_loss(data, fit.w, fit.b, options.l2));
    std::array<double, 4> grad{};
    double grad_b = 0.0;
    for (const auto& d : data) {
      const double r = sigmoid(logit_of(fit.w, fit.b, d.scores)) - (d.watermarked ? 1.0 : 0.0);
      const auto a = d.scores.as_array();
      for (std::size_t i = 0; i < 4; ++i) grad[i] += r * a[i];
      grad_b += r;
    }
    for (std::size_t i = 0; i < 4; ++i) {
      if (!options.active[i]) continue;
      fit.w[i] -= options.lr * (grad[i] / n + options.l2 * fit.w[i]);
    }
    fit.b -= options.lr * grad_b / n;
  }
  fit.loss.push_back(ensemble_loss(data, fit.w, fit.b, options.l2));
  return fit;
}

double ensemble_score(const EnsembleModel& model, const ScoreVector& a) {
  return sigmoid(logit_of(model.w, model.b, a));
}

double calibrate_threshold(std::span<const double> benign_scores, double alpha) {
  if (benign_scores.empty()) throw std::invalid_argument("calibrate_threshold: no benign scores");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("calibrate_threshold: alpha must lie in (0,1)");
  std::vector<double> sorted(benign_scores.begin(), benign_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double m = static_cast<double>(sorted.size());
  // Walk distinct values upward; #{s >= v} is everything from v's first slot on.
  for (std::size_t i = 0; i < sorted.size();) {
    const double exceed = m - static_cast<double>(i);
    if (exceed / m <= alpha) return sorted[i];
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    i = j;
  }
  return std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
}

double empirical_fpr(std::span<const double> benign_scores, double tau) {
  if (benign_scores.empty()) return 0.0;
  const auto hits = std::count_if(benign_scores.begin(), benign_scores.end(), [tau](double s) { return s >= tau; });
  return static_cast<double>(hits) / static_cast<double>(benign_scores.size());
}

bool decide(const EnsembleModel& model, const ScoreVector& a) { return ensemble_score(model, a) >= model.tau; }

double mad_temperature(std::span<const double> deltas) {
  if (deltas.empty()) return 1.0;
  std::vector<double> v(deltas.begin(), deltas.end());
  const double med = median(v);
  for (double& x : v) x = std::abs(x - med);
  const double mad = median(std::move(v));
  if (!(mad > 0.0) || !std::isfinite(mad)) return 1.0;
  return 1.0 / (1.4826 * mad);
}

Temperatures fit_temperatures(std::span<const LabeledScore> data) {
  std::vector<double> mah, ene;
  for (const auto& d : data) {
    if (!d.raw.geometry) continue;
    mah.push_back(d.raw.delta_mah);
    ene.push_back(d.raw.delta_ene);
  }
  return {mad_temperature(mah), mad_temperature(ene)};
}

void rescore(std::span<LabeledScore> data, const Temperatures& temps) {
  for (auto& d : data) d.scores = normalize_scores(d.raw, temps.beta_mah, temps.beta_ene);
}

std::vector<LabeledScore> build_validation_set(const AuditSetup& setup,
                                               std::span<const AttackConfig> attacks,
                                               std::size_t n_pairs, const QuerySpec& queries,
                                               std::uint64_t seed) {
  if (n_pairs < 1) throw std::invalid_argument("build_validation_set: n_pairs must be >= 1");
  for (const auto& a : attacks) a.validate();
  const std::size_t per_pair = 2 + attacks.size();
  auto items = parallel_map(n_pairs * per_pair, [&](std::size_t task) {
    const std::size_t pair = task / per_pair;
    const std::size_t slot = task % per_pair;
    LabeledScore item;
    item.watermarked = slot != 0;
    item.perturbed = slot >= 2;
    const auto query = make_query(setup.provider, queries, item.watermarked,
                                  derive_seed(seed, item.watermarked ? "val-wm" : "val-clean", pair));
    std::vector<TokenId> tokens = query.completion.ids;
    if (item.perturbed)
      tokens = apply_attack(attacks[slot - 2], tokens, setup.provider.model, derive_seed(seed, "val-attack", pair));
    item.raw = measure_query(setup, tokens, derive_seed(seed, "val-bundle", task));
    item.scores = normalize_scores(item.raw, setup.measure.beta_mah, setup.measure.beta_ene);
    return item;
  });
  return items;
}

namespace {

void fit_and_threshold(CalibrationResult& out, const FitOptions& fit) {
  out.fit = fit_ensemble(out.validation, fit);
  out.model.w = out.fit.w;
  out.model.b = out.fit.b;
  out.benign_scores.clear();
  for (const auto& raw : out.benign_raw)
    out.benign_scores.push_back(
        ensemble_score(out.model, normalize_scores(raw, out.model.meta.beta_mah, out.model.meta.beta_ene)));
  out.model.tau = calibrate_threshold(out.benign_scores, out.model.alpha_fpr);
  out.achieved_fpr = empirical_fpr(out.benign_scores, out.model.tau);
}

}  // namespace

std::vector<LabeledScore> validation_from_records(const AuditSetup& setup, std::span<const GenRecord> records,
                                                  std::span<const AttackConfig> attacks, std::uint64_t seed) {
  for (const auto& a : attacks) a.validate();
  const std::size_t per_record = 1 + attacks.size();
  auto items = parallel_map(records.size() * per_record, [&](std::size_t task) {
    const auto& rec = records[task / per_record];
    const std::size_t slot = task % per_record;
    std::optional<LabeledScore> item;
    if (slot > 0 && !rec.watermarked) return item;
    item.emplace();
    item->watermarked = rec.watermarked;
    item->perturbed = slot > 0;
    std::vector<TokenId> tokens = rec.completion.ids;
    if (item->perturbed)
      tokens = apply_attack(attacks[slot - 1], tokens, setup.provider.model,
                            derive_seed(seed, "val-attack", task / per_record));
    item->raw = measure_query(setup, tokens, derive_seed(seed, "val-bundle", task));
    item->scores = normalize_scores(item->raw, setup.measure.beta_mah, setup.measure.beta_ene);
    return item;
  });
  std::vector<LabeledScore> out;
  for (auto& item : items)
    if (item) out.push_back(std::move(*item));
  return out;
}

CalibrationResult calibrate(const AuditSetup& setup, const CalibrationSpec& spec, std::uint64_t seed) {
  return calibrate(setup, spec,
                   build_validation_set(setup, spec.attacks, spec.n_val_pairs, spec.queries,
                                        derive_seed(seed, "validation")),
                   seed);
}

CalibrationResult calibrate(const AuditSetup& setup, const CalibrationSpec& spec,
                            std::vector<LabeledScore> validation, std::uint64_t seed) {
  CalibrationResult out;
  out.validation = std::move(validation);
  Temperatures temps{setup.measure.beta_mah, setup.measure.beta_ene};
  if (spec.fit_temperatures) temps = fit_temperatures(out.validation);
  rescore(out.validation, temps);

  out.model.alpha_fpr = spec.alpha_fpr;
  out.model.meta = setup.measure;
  out.model.meta.beta_mah = temps.beta_mah;
  out.model.meta.beta_ene = temps.beta_ene;

  const std::uint64_t benign_seed = derive_seed(seed, "benign");
  out.benign_raw = parallel_map(spec.n_benign, [&](std::size_t i) {
    const auto query = make_query(setup.provider, spec.queries, false, derive_seed(benign_seed, "query", i));
    return measure_query(setup, query.completion.ids, derive_seed(benign_seed, "bundle", i));
  });
  fit_and_threshold(out, spec.fit);
  return out;
}

CalibrationResult refit(const CalibrationResult& base, const FitOptions& fit) {
  CalibrationResult out = base;
  fit_and_threshold(out, fit);
  return out;
}

nlohmann::json model_to_json(const EnsembleModel& model) {
  const auto& m = model.meta;
  return {{"w", model.w},
          {"b", model.b},
          {"tau", model.tau},
          {"alpha", model.alpha_fpr},
          {"meta",
           {{"k", m.k},
            {"d_prime", m.d_prime},
            {"alpha_shrink", m.alpha_shrink},
            {"beta_mah", m.beta_mah},
            {"beta_ene", m.beta_ene},
            {"lambda", m.lambda},
            {"epsilon", m.epsilon}}}};
}

EnsembleModel model_from_json(const nlohmann::json& j) {
  EnsembleModel model;
  const auto w = j.at("w").get<std::vector<double>>();
  if (w.size() != 4) throw std::invalid_argument("model.w must hold 4 weights");
  std::copy(w.begin(), w.end(), model.w.begin());
  model.b = j.at("b").get<double>();
  model.tau = j.at("tau").get<double>();
  model.alpha_fpr = j.at("alpha").get<double>();
  const auto& meta = j.at("meta");
  model.meta.k = meta.at("k").get<std::size_t>();
  model.meta.d_prime = meta.at("d_prime").get<std::size_t>();
  model.meta.alpha_shrink = meta.at("alpha_shrink").get<double>();
  model.meta.beta_mah = meta.at("beta_mah").get<double>();
  model.meta.beta_ene = meta.at("beta_ene").get<double>();
  model.meta.lambda = meta.at("lambda").get<double>();
  model.meta.epsilon = meta.at("epsilon").get<double>();
  if (!(model.alpha_fpr > 0.0 && model.alpha_fpr < 1.0)) throw std::invalid_argument("model.alpha must lie in (0,1)");
  if (!(model.meta.beta_mah > 0.0) || !(model.meta.beta_ene > 0.0))
    throw std::invalid_argument("model.meta temperatures must be positive");
  return model;
}

void save_model(const std::filesystem::path& path, const EnsembleModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << model_to_json(model).dump(2) << '\n';
}

EnsembleModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file '" + path.string() + "'");
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed model file '" + path.string() + "': " + e.what());
  }
}

}  // namespace wmaudit
