// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/SVD>
#include <cmath>
#include <vector>

#include "catch_amalgamated.hpp"
#include "oracles/frozen_values.hpp"
#include "wmaudit/measurements.hpp"

using namespace wmaudit;
using Catch::Approx;

namespace {

FeatureVec prf_vector(std::uint64_t seed, int i, std::size_t dim) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (std::size_t j = 0; j < dim; ++j) {
    const std::vector<TokenId> ids{i, static_cast<TokenId>(j)};
    v(static_cast<Eigen::Index>(j)) = to_unit_open(hash_ids(seed, ids)) - 0.5;
  }
  return FeatureVec::normalized(v);
}

std::vector<FeatureVec> prf_set(std::uint64_t seed, int n, std::size_t dim) {
  std::vector<FeatureVec> out;
  for (int i = 0; i < n; ++i) out.push_back(prf_vector(seed, i, dim));
  return out;
}

}  // namespace

TEST_CASE("measurements match the Python oracle") {
  const auto zo = prf_set(101, 6, 16);
  const auto zwm = prf_set(202, 6, 16);
  const auto geom = fit_geometry(zo, zwm, 4, 0.05);
  for (int i = 0; i < 3; ++i) {
    const auto q = prf_vector(303, i, 16);
    CHECK(local_consistency(q, zo, zwm, 5) == Approx(oracle::kLocalConsistencyK5[i]).margin(1e-12));
    CHECK(mahalanobis_contrast(geom, q) == Approx(oracle::kMahalanobisD4[i]).epsilon(1e-9));
    CHECK(energy_contrast(q, zo, zwm) == Approx(oracle::kEnergyContrast[i]).margin(1e-12));
  }
  std::vector<double> fo, fwm;
  for (int i = 0; i < 8; ++i) {
    const std::vector<TokenId> id{i};
    fo.push_back(to_unit_open(hash_ids(404, id)));
    fwm.push_back(to_unit_open(hash_ids(505, id)) + 0.2);
  }
  const double queries[] = {0.1, 0.5, 0.9, 1.1};
  for (int i = 0; i < 4; ++i)
    CHECK(rank_tendency(queries[i], fo, fwm, 1e-6) == Approx(oracle::kRankTendency[i]).epsilon(1e-12));
}

TEST_CASE("local consistency edge cases") {
  const auto zo = prf_set(1, 4, 8);
  const auto zwm = prf_set(2, 4, 8);
  // Query equal to a wm reference with k = 1 picks it.
  CHECK(local_consistency(zwm[2], zo, zwm, 1) == 1.0);
  CHECK(local_consistency(zo[1], zo, zwm, 1) == 0.0);
  // All references identical: ties resolve o-set first, weights are equal.
  const std::vector<FeatureVec> same(4, zo[0]);
  CHECK(local_consistency(zo[1], same, same, 4) == 0.0);
  CHECK(local_consistency(zo[1], same, same, 8) == Approx(0.5));
  CHECK_THROWS_AS(local_consistency(zo[0], zo, zwm, 0), std::invalid_argument);
  CHECK_THROWS_AS(local_consistency(zo[0], zo, zwm, 9), std::invalid_argument);
  const std::vector<FeatureVec> empty;
  CHECK_THROWS_AS(local_consistency(zo[0], empty, zwm, 1), std::invalid_argument);
}

TEST_CASE("label swap antisymmetry") {
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    const auto zo = prf_set(derive_seed(trial, "o"), 8, 32);
    const auto zwm = prf_set(derive_seed(trial, "wm"), 8, 32);
    const auto q = prf_vector(derive_seed(trial, "q"), 0, 32);
    CHECK(std::abs(local_consistency(q, zwm, zo, 5) - (1.0 - local_consistency(q, zo, zwm, 5))) <= 1e-12);
    const auto g = fit_geometry(zo, zwm, 6, 0.05);
    const auto gs = fit_geometry(zwm, zo, 6, 0.05);
    CHECK(std::abs(mahalanobis_contrast(gs, q) + mahalanobis_contrast(g, q)) <= 1e-9);
    CHECK(std::abs(mahalanobis_contrast(g.swapped(), q) + mahalanobis_contrast(g, q)) <= 1e-12);
    CHECK(std::abs(energy_contrast(q, zwm, zo) + energy_contrast(q, zo, zwm)) <= 1e-12);
  }
}

TEST_CASE("identity covariance reduces to squared Euclidean contrast") {
  const auto zo = prf_set(11, 6, 12);
  const auto zwm = prf_set(12, 6, 12);
  auto g = fit_geometry(zo, zwm, 5, 0.05);
  g.sigma_o = Eigen::MatrixXd::Identity(5, 5);
  g.sigma_wm = Eigen::MatrixXd::Identity(5, 5);
  for (int i = 0; i < 100; ++i) {
    const auto q = prf_vector(13, i, 12);
    const Eigen::VectorXd p = g.project(q);
    const double expected = (p - g.mu_o).squaredNorm() - (p - g.mu_wm).squaredNorm();
    CHECK(std::abs(mahalanobis_contrast(g, q) - expected) <= 1e-9);
  }
}

TEST_CASE("PCA recovers a rank-2 subspace") {
  // Points in span{e1, e2} of R^6 plus a common offset along e0.
  std::vector<FeatureVec> zo, zwm;
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(6), b = Eigen::VectorXd::Zero(6);
    a << 3.0, std::cos(i * 0.7), 0.5 * std::sin(i * 1.3), 0, 0, 0;
    b << 3.0, -0.8 * std::sin(i * 0.9), std::cos(i * 0.4) - 0.2, 0, 0, 0;
    zo.push_back(FeatureVec::normalized(a));
    zwm.push_back(FeatureVec::normalized(b));
  }
  // Normalization keeps every point on a circle arc in span{e0,e1,e2}; the
  // centered cloud spans at most that 3-space.
  const auto g = fit_geometry(zo, zwm, 3, 0.05);
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(6, 3);
  basis(0, 0) = basis(1, 1) = basis(2, 2) = 1.0;
  const Eigen::MatrixXd overlap = basis.transpose() * g.projection;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(overlap);
  // Smallest principal cosine 1 means zero subspace angle.
  CHECK(svd.singularValues().minCoeff() == Approx(1.0).margin(1e-9));
  CHECK((g.projection.transpose() * g.projection - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("fit_geometry guards and degenerate covariance") {
  const auto one = prf_set(1, 1, 8);
  const auto two = prf_set(2, 2, 8);
  CHECK_THROWS_AS(fit_geometry(one, one, 2, 0.05), std::invalid_argument);
  CHECK_THROWS_AS(fit_geometry(two, prf_set(3, 3, 8), 2, 0.05), std::invalid_argument);
  CHECK_THROWS_AS(fit_geometry(two, two, 2, 0.0), std::invalid_argument);
  const std::vector<FeatureVec> same(3, two[0]);
  const auto g = fit_geometry(same, prf_set(4, 3, 8), 2, 0.05);
  CHECK(g.sigma_o.isApprox(kDegenerateCovariance * Eigen::MatrixXd::Identity(2, 2)));
  // d_prime beyond 2N - 1 is clamped.
  CHECK(fit_geometry(two, prf_set(5, 2, 8), 50, 0.05).subspace_dim() == 3);
}

TEST_CASE("energy distance basics") {
  const auto s = prf_set(7, 5, 10);
  const std::vector<FeatureVec> single{s[0]};
  CHECK(energy_distance(s[0], single) == 0.0);
  CHECK(energy_distance(s[1], single) == Approx(2.0 * (s[1].values() - s[0].values()).norm()));
}

TEST_CASE("sigmoid normalization") {
  CHECK(normalize_score(0.0, 1.0) == 0.5);
  CHECK(normalize_score(1e6, 1.0) == 1.0);
  CHECK(normalize_score(-1e6, 1.0) == 0.0);
  CHECK(normalize_score(2.0, 0.5) == Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK_THROWS_AS(normalize_score(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("rank tendency direction and symmetry") {
  const std::vector<double> lo{1, 2, 3, 4}, hi{5, 6, 7, 8};
  CHECK(rank_tendency(7.5, lo, hi, 1e-6) > 0.5);
  CHECK(rank_tendency(1.5, lo, hi, 1e-6) < 0.5);
  // Reversing the direction of the watermark shift flips alignment.
  CHECK(rank_tendency(1.5, hi, lo, 1e-6) > 0.5);
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(16), b(16);
    for (auto& x : a) x = rng.uniform();
    for (auto& x : b) x = rng.uniform();
    const double q = rng.uniform();
    // The sum is S / (S + eps) with S = p_wm + p_o >= 2 / 17.
    CHECK(std::abs(rank_tendency(q, a, b, 1e-6) + rank_tendency(q, b, a, 1e-6) - 1.0) <= 8.5e-6 + 1e-12);
  }
  CHECK_THROWS_AS(rank_tendency(0.0, {}, hi, 1e-6), std::invalid_argument);
}

TEST_CASE("adaptive rank mixes GE and LV") {
  std::vector<NLLStats> o, wm;
  for (int i = 0; i < 8; ++i) {
    o.push_back(NLLStats::from_sequence({1.0 + 0.1 * i, 1.0 + 0.1 * i}));
    wm.push_back(NLLStats::from_sequence({2.0 + 0.1 * i, 2.0 + 0.1 * i}));
  }
  const auto q = NLLStats::from_sequence({2.5, 2.5});
  const double ge = rank_tendency(2.5, std::vector<double>{1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7},
                                  std::vector<double>{2.0, 2.1, 2.2, 2.3, 2.4, 2.5, 2.6, 2.7}, 1e-6);
  const double lv = rank_tendency(0.0, std::vector<double>(8, 0.0), std::vector<double>(8, 0.0), 1e-6);
  CHECK(adaptive_rank(q, o, wm, 0.6, 1e-6) == Approx(0.6 * ge + 0.4 * lv));
  CHECK_THROWS_AS(adaptive_rank(q, o, wm, 1.5, 1e-6), std::invalid_argument);
}

TEST_CASE("hyperparameter auto rules") {
  MeasureParams p;
  CHECK(resolve_k(p, 16) == 7);
  CHECK(resolve_k(p, 8) == 3);
  CHECK(resolve_k(p, 1) == 1);
  p.k = 5;
  CHECK(resolve_k(p, 16) == 5);
  MeasureParams d;
  CHECK(resolve_d_prime(d, 16, 256) == 8);
  CHECK(resolve_d_prime(d, 2, 256) == 2);
  d.d_prime = 100;
  CHECK(resolve_d_prime(d, 4, 256) == 7);
}

TEST_CASE("raw scores on singleton bundles skip geometry") {
  ReferenceBundle b;
  b.z_o = prf_set(1, 1, 8);
  b.z_wm = prf_set(2, 1, 8);
  b.z_q = prf_vector(3, 0, 8);
  b.nll_o = {NLLStats::from_sequence({1.0, 2.0})};
  b.nll_wm = {NLLStats::from_sequence({2.0, 3.0})};
  b.nll_q = NLLStats::from_sequence({1.5, 2.5});
  const auto raw = raw_scores(b, MeasureParams{});
  CHECK_FALSE(raw.geometry);
  const auto s = normalize_scores(raw, 1.0, 1.0);
  CHECK(s.a_mah == 0.5);
  CHECK(s.a_ene == 0.5);
}
