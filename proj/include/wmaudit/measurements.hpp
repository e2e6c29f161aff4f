// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

// The four relative measurements of a query against its paired reference
// sets: kernel-weighted kNN consistency, PCA-subspace Mahalanobis contrast,
// energy-distance contrast, and the direction-adaptive NLL rank test.

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <span>

#include "wmaudit/representation.hpp"

namespace wmaudit {

/// Kernel-weighted fraction of watermarked references among the k nearest
/// (cosine) neighbors of z_q. Candidates are ordered o-set first, then
/// wm-set, each by index; equal distances keep that order. The bandwidth is
/// the mean neighbor cosine distance floored at 1e-6.
/// Throws std::invalid_argument on empty sets or k outside [1, |Z_o|+|Z_wm|].
double local_consistency(const FeatureVec& z_q, std::span<const FeatureVec> z_o,
                         std::span<const FeatureVec> z_wm, std::size_t k);

/// Kernel weight exp(-(1 - sim) / sigma^2).
double kernel_weight(double cosine_distance, double sigma);

struct GeometryModel {
  Eigen::VectorXd mu_ref;
  Eigen::MatrixXd projection;  // W, d x d', orthonormal columns
  Eigen::VectorXd mu_o;
  Eigen::VectorXd mu_wm;
  Eigen::MatrixXd sigma_o;     // shrinkage-regularized, d' x d'
  Eigen::MatrixXd sigma_wm;
  double alpha = 0.05;
  double beta_mah = 1.0;
  double beta_ene = 1.0;

  std::size_t subspace_dim() const noexcept { return static_cast<std::size_t>(projection.cols()); }
  Eigen::VectorXd project(const FeatureVec& z) const;
  GeometryModel swapped() const;
};

inline constexpr double kDegenerateCovariance = 1e-6;

/// PCA on the centered union, then per-class means and covariances with the
/// 1/(N-1) estimator plus alpha * tr / d' shrinkage. A zero-trace covariance
/// becomes 1e-6 * I. d_prime is clamped to min(d, 2N - 1).
/// Throws std::invalid_argument when N < 2, the sets differ in size, or
/// alpha <= 0.
GeometryModel fit_geometry(std::span<const FeatureVec> z_o, std::span<const FeatureVec> z_wm,
                           std::size_t d_prime, double alpha, double beta_mah = 1.0,
                           double beta_ene = 1.0);

double squared_mahalanobis(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& covariance);

/// delta^2_o - delta^2_wm in the PCA subspace; positive leans watermarked.
double mahalanobis_contrast(const GeometryModel& geom, const FeatureVec& z_q);

/// Query-to-set energy distance (2/N) sum ||q - z|| - (1/N^2) sum ||z - z'||.
double energy_distance(const FeatureVec& z_q, std::span<const FeatureVec> set);

/// energy(q, Z_o) - energy(q, Z_wm), in the ambient space.
double energy_contrast(const FeatureVec& z_q, std::span<const FeatureVec> z_o,
                       std::span<const FeatureVec> z_wm);

/// sigma(beta * delta). Throws std::invalid_argument if beta <= 0.
double normalize_score(double delta, double beta);

double sigmoid(double x) noexcept;

/// Direction-aligned smoothed conformity score s_f for one feature.
double rank_tendency(double f_query, std::span<const double> f_o, std::span<const double> f_wm,
                     double epsilon);

/// lambda * s_GE + (1 - lambda) * s_LV.
double adaptive_rank(const NLLStats& nll_q, std::span<const NLLStats> nll_o,
                     std::span<const NLLStats> nll_wm, double lambda, double epsilon);

struct ScoreVector {
  double a_loc = 0.5;
  double a_mah = 0.5;
  double a_ene = 0.5;
  double a_ada = 0.5;

  std::array<double, 4> as_array() const noexcept { return {a_loc, a_mah, a_ene, a_ada}; }
};

inline constexpr std::array<const char*, 4> kScoreNames{"a_loc", "a_mah", "a_ene", "a_ada"};

struct MeasureParams {
  std::size_t k = 0;        // 0: largest odd number not exceeding N/2
  std::size_t d_prime = 0;  // 0: min(8, 2N - 2)
  double alpha_shrink = 0.05;
  double beta_mah = 1.0;
  double beta_ene = 1.0;
  double lambda = 0.6;
  double epsilon = 1e-6;
};

std::size_t resolve_k(const MeasureParams& params, std::size_t n_refs);
std::size_t resolve_d_prime(const MeasureParams& params, std::size_t n_refs, std::size_t dim);

/// Measurements before sigmoid normalization. With N < 2 the geometry
/// contrasts are disabled (geometry == false, deltas 0).
struct RawScores {
  double a_loc = 0.5;
  double delta_mah = 0.0;
  double delta_ene = 0.0;
  double a_ada = 0.5;
  bool geometry = false;
};

RawScores raw_scores(const ReferenceBundle& bundle, const MeasureParams& params);
ScoreVector normalize_scores(const RawScores& raw, double beta_mah, double beta_ene);
ScoreVector score_vector(const ReferenceBundle& bundle, const MeasureParams& params);

}  // namespace wmaudit
