// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <vector>

#include "catch_amalgamated.hpp"
#include "wmaudit/config.hpp"
#include "wmaudit/ensemble.hpp"

using namespace wmaudit;
using Catch::Approx;

namespace {

LabeledScore entry(double a_loc, bool wm, double rest = 0.5) {
  LabeledScore s;
  s.scores = {a_loc, rest, rest, rest};
  s.watermarked = wm;
  return s;
}

double accuracy(std::span<const LabeledScore> data, const FitResult& fit) {
  EnsembleModel m;
  m.w = fit.w;
  m.b = fit.b;
  std::size_t ok = 0;
  for (const auto& d : data) ok += (ensemble_score(m, d.scores) >= 0.5) == d.watermarked;
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

std::vector<LabeledScore> noisy_data(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<LabeledScore> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool wm = i % 2 == 1;
    LabeledScore s;
    const double shift = wm ? 0.15 : -0.15;
    s.scores = {0.5 + shift + 0.3 * (rng.uniform() - 0.5), 0.5 + 0.5 * shift + 0.4 * (rng.uniform() - 0.5),
                rng.uniform(), 0.5 - shift + 0.3 * (rng.uniform() - 0.5)};
    s.watermarked = wm;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("separable one-dimensional data is fitted perfectly") {
  std::vector<LabeledScore> data;
  for (int i = 0; i < 10; ++i) data.push_back(entry(0.1 + 0.02 * i, false));
  for (int i = 0; i < 10; ++i) data.push_back(entry(0.7 + 0.02 * i, true));
  FitOptions opt;
  opt.epochs = 500;
  opt.lr = 0.5;
  const auto fit = fit_ensemble(data, opt);
  CHECK(accuracy(data, fit) == 1.0);
  CHECK(fit.w[0] > 0.0);
  CHECK(fit.loss.size() == opt.epochs + 1);
}

TEST_CASE("indistinguishable classes stay near 0.5") {
  std::vector<LabeledScore> data;
  for (int i = 0; i < 20; ++i) data.push_back(entry(0.3 + 0.01 * (i / 2), i % 2 == 0));
  const auto fit = fit_ensemble(data);
  EnsembleModel m;
  m.w = fit.w;
  m.b = fit.b;
  for (const auto& d : data) CHECK(ensemble_score(m, d.scores) == Approx(0.5).margin(0.05));
}

TEST_CASE("duplicating the data leaves the fit unchanged") {
  const auto data = noisy_data(5, 40);
  auto doubled = data;
  doubled.insert(doubled.end(), data.begin(), data.end());
  FitOptions opt;
  opt.epochs = 300;
  const auto a = fit_ensemble(data, opt);
  const auto b = fit_ensemble(doubled, opt);
  for (int i = 0; i < 4; ++i) CHECK(a.w[i] == Approx(b.w[i]).margin(1e-9));
  CHECK(a.b == Approx(b.b).margin(1e-9));
}

TEST_CASE("loss is nonincreasing at a small step size") {
  const auto data = noisy_data(9, 60);
  FitOptions opt;
  opt.epochs = 400;
  opt.lr = 0.1;
  const auto fit = fit_ensemble(data, opt);
  for (std::size_t i = 1; i < fit.loss.size(); ++i) CHECK(fit.loss[i] <= fit.loss[i - 1] + 1e-12);
  CHECK(fit.loss.front() == Approx(std::log(2.0)));
  CHECK(fit.loss.back() == Approx(ensemble_loss(data, fit.w, fit.b, opt.l2)));
}

TEST_CASE("inactive features keep zero weight") {
  const auto data = noisy_data(2, 40);
  FitOptions opt;
  opt.epochs = 200;
  opt.active = {true, false, true, false};
  const auto fit = fit_ensemble(data, opt);
  CHECK(fit.w[1] == 0.0);
  CHECK(fit.w[3] == 0.0);
  CHECK(fit.w[0] != 0.0);
}

TEST_CASE("fit guards") {
  std::vector<LabeledScore> one_class{entry(0.2, true), entry(0.3, true)};
  CHECK_THROWS_AS(fit_ensemble(one_class), std::invalid_argument);
  auto both = one_class;
  both.push_back(entry(0.1, false));
  FitOptions opt;
  opt.epochs = 0;
  CHECK_THROWS_AS(fit_ensemble(both, opt), std::invalid_argument);
}

TEST_CASE("ensemble score and decision") {
  EnsembleModel m;
  CHECK(ensemble_score(m, ScoreVector{}) == 0.5);
  m.w = {1.0, 1.0, 1.0, 1.0};
  m.b = -2.0;
  CHECK(ensemble_score(m, ScoreVector{}) == Approx(0.5));
  CHECK(ensemble_score(m, ScoreVector{1, 1, 1, 1}) == Approx(1.0 / (1.0 + std::exp(-2.0))));
  m.tau = ensemble_score(m, ScoreVector{0.7, 0.2, 0.6, 0.9});
  CHECK(decide(m, ScoreVector{0.7, 0.2, 0.6, 0.9}));
  CHECK_FALSE(decide(m, ScoreVector{0.7, 0.2, 0.6, 0.8}));
}

TEST_CASE("threshold calibration") {
  std::vector<double> ten;
  for (int i = 0; i < 10; ++i) ten.push_back(0.1 * i);
  CHECK(calibrate_threshold(ten, 0.1) == Approx(0.9));
  CHECK(empirical_fpr(ten, calibrate_threshold(ten, 0.1)) <= 0.1);
  CHECK(calibrate_threshold(ten, 0.3) == Approx(0.7));
  CHECK(calibrate_threshold(ten, 0.95) == Approx(0.1));

  const std::vector<double> flat(20, 0.3);
  const double t = calibrate_threshold(flat, 0.05);
  CHECK(t > 0.3);
  CHECK(empirical_fpr(flat, t) == 0.0);

  CHECK_THROWS_AS(calibrate_threshold(std::vector<double>{}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(calibrate_threshold(ten, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(calibrate_threshold(ten, 1.0), std::invalid_argument);
}

TEST_CASE("threshold controls FPR on random scores") {
  Rng rng(77);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(1 + rng.below(300));
    for (auto& x : s) x = std::round(rng.uniform() * 20.0) / 20.0;
    const double alpha = 0.01 + 0.3 * rng.uniform();
    CHECK(empirical_fpr(s, calibrate_threshold(s, alpha)) <= alpha);
  }
}

TEST_CASE("MAD temperature") {
  CHECK(mad_temperature(std::vector<double>{}) == 1.0);
  CHECK(mad_temperature(std::vector<double>{2, 2, 2}) == 1.0);
  // Median 3, absolute deviations {2,1,0,1,2} -> MAD 1.
  CHECK(mad_temperature(std::vector<double>{1, 2, 3, 4, 5}) == Approx(1.0 / 1.4826));
}

TEST_CASE("model JSON round trip") {
  EnsembleModel m;
  m.w = {0.25, -1.5, 3.0, 0.125};
  m.b = -0.75;
  m.tau = 0.6180339887498949;
  m.alpha_fpr = 0.01;
  m.meta.k = 5;
  m.meta.d_prime = 6;
  m.meta.beta_mah = 0.123;
  m.meta.beta_ene = 4.56;
  m.meta.lambda = 0.3;
  const auto back = model_from_json(model_to_json(m));
  CHECK(back.w == m.w);
  CHECK(back.b == m.b);
  CHECK(back.tau == m.tau);
  CHECK(back.alpha_fpr == m.alpha_fpr);
  CHECK(back.meta.k == 5);
  CHECK(back.meta.d_prime == 6);
  CHECK(back.meta.beta_mah == m.meta.beta_mah);
  CHECK(back.meta.beta_ene == m.meta.beta_ene);
  CHECK(back.meta.lambda == m.meta.lambda);

  const auto path = std::filesystem::temp_directory_path() / "wmaudit_model_roundtrip.json";
  save_model(path, m);
  CHECK(model_to_json(load_model(path)) == model_to_json(m));
  std::filesystem::remove(path);
  CHECK_THROWS(model_from_json(nlohmann::json{{"w", {1, 2}}}));
}

TEST_CASE("validation set composition") {
  ExperimentConfig cfg;
  cfg.detection.n_refs = 4;
  cfg.detection.prefix_len = 10;
  cfg.experiment.query_length = 40;
  cfg.experiment.prompt_length = 10;
  cfg.provider.teacher_sequences = 50;
  cfg.provider.scoring_sequences = 50;
  const auto setup = make_setup(cfg);
  const std::vector<AttackConfig> attacks{AttackConfig{DeleteAttack{0.2}, 1}, AttackConfig{SubstituteAttack{0.2}, 2}};
  const auto val = build_validation_set(setup, attacks, 10, query_spec(cfg), 3);
  REQUIRE(val.size() == 40);
  std::size_t clean = 0, wm = 0, perturbed = 0;
  for (const auto& v : val) {
    if (v.perturbed) {
      ++perturbed;
      CHECK(v.watermarked);
    } else {
      (v.watermarked ? wm : clean) += 1;
    }
    for (double a : v.scores.as_array()) CHECK((a >= 0.0 && a <= 1.0));
  }
  CHECK(clean == 10);
  CHECK(wm == 10);
  CHECK(perturbed == 20);
  // Same seed, same set.
  const auto again = build_validation_set(setup, attacks, 10, query_spec(cfg), 3);
  for (std::size_t i = 0; i < val.size(); ++i) CHECK(again[i].scores.as_array() == val[i].scores.as_array());
}
