// Copyright (C) 2026 The wm-audit Authors
// SPDX-License-Identifier: Apache-2.0

#include "wmaudit/measurements.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmaudit/log.hpp"

namespace wmaudit {

namespace {

constexpr double kSigmaFloor = 1e-6;

// Row order used for every reduction over a reference set: lexicographic on
// the coordinates, so fits depend on set contents, not storage order.
std::vector<std::size_t> canonical_order(std::span<const FeatureVec> set) {
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = set[a].values();
    const auto& y = set[b].values();
    return std::lexicographical_compare(x.data(), x.data() + x.size(), y.data(), y.data() + y.size());
  });
  return idx;
}

Eigen::MatrixXd stack_rows(std::span<const FeatureVec> set) {
  const auto order = canonical_order(set);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(set.front().dim()));
  for (std::size_t r = 0; r < order.size(); ++r)
    m.row(static_cast<Eigen::Index>(r)) = set[order[r]].values().transpose();
  return m;
}

void check_set(std::span<const FeatureVec> set, std::size_t dim, const char* what) {
  for (const auto& z : set)
    if (z.dim() != dim) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

// Fixes the sign ambiguity of an eigenvector: largest-magnitude entry positive.
void canonical_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
}

// Extends the first `filled` orthonormal columns of w to a full orthonormal
// set using standard basis candidates (Gram-Schmidt, two passes).
void complete_basis(Eigen::MatrixXd& w, Eigen::Index filled) {
  const Eigen::Index d = w.rows();
  for (Eigen::Index cand = 0; filled < w.cols() && cand < d; ++cand) {
    Eigen::VectorXd v = Eigen::VectorXd::Unit(d, cand);
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index c = 0; c < filled; ++c) v -= w.col(c).dot(v) * w.col(c);
    const double n = v.norm();
    if (n > 1e-6) w.col(filled++) = v / n;
  }
}

Eigen::MatrixXd class_covariance(const Eigen::MatrixXd& projected, const Eigen::VectorXd& mean,
                                 double alpha) {
  const Eigen::Index dp = projected.cols();
  Eigen::MatrixXd centered = projected.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(projected.rows() - 1);
  const double trace = cov.trace();
  if (!(trace > 0.0)) return kDegenerateCovariance * Eigen::MatrixXd::Identity(dp, dp);
  cov.diagonal().array() += alpha * trace / static_cast<double>(dp);
  return cov;
}

}  // namespace

double kernel_weight(double cosine_distance, double sigma) {
  return std::exp(-cosine_distance / (sigma * sigma));
}

double local_consistency(const FeatureVec& z_q, std::span<const FeatureVec> z_o,
                         std::span<const FeatureVec> z_wm, std::size_t k) {
  if (z_o.empty() || z_wm.empty()) throw std::invalid_argument("local_consistency: empty reference set");
  const std::size_t total = z_o.size() + z_wm.size();
  if (k < 1 || k > total)
    throw std::invalid_argument("local_consistency: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(total) + "]");
  check_set(z_o, z_q.dim(), "local_consistency");
  check_set(z_wm, z_q.dim(), "local_consistency");

  struct Candidate {
    double distance;
    bool watermarked;
  };
  std::vector<Candidate> cands;
  cands.reserve(total);
  for (const auto& z : z_o) cands.push_back({1.0 - z_q.values().dot(z.values()), false});
  for (const auto& z : z_wm) cands.push_back({1.0 - z_q.values().dot(z.values()), true});
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.distance < b.distance; });

  double sigma = 0.0;
  for (std::size_t i = 0; i < k; ++i) sigma += cands[i].distance;
  sigma = std::max(sigma / static_cast<double>(k), kSigmaFloor);

  // Shift by the nearest distance: the ratio is unchanged and nothing underflows.
  const double nearest = cands.front().distance;
  double wm_mass = 0.0;
  double mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = kernel_weight(cands[i].distance - nearest, sigma);
    mass += w;
    if (cands[i].watermarked) wm_mass += w;
  }
  return wm_mass / mass;
}

Eigen::VectorXd GeometryModel::project(const FeatureVec& z) const {
  return projection.transpose() * (z.values() - mu_ref);
}

GeometryModel GeometryModel::swapped() const {
  GeometryModel out = *this;
  std::swap(out.mu_o, out.mu_wm);
  std::swap(out.sigma_o, out.sigma_wm);
  return out;
}

GeometryModel fit_geometry(std::span<const FeatureVec> z_o, std::span<const FeatureVec> z_wm,
                           std::size_t d_prime, double alpha, double beta_mah, double beta_ene) {
  if (z_o.size() < 2 || z_wm.size() < 2)
    throw std::invalid_argument("fit_geometry: each reference set needs at least 2 samples");
  if (z_o.size() != z_wm.size()) throw std::invalid_argument("fit_geometry: reference sets differ in size");
  if (!(alpha > 0.0)) throw std::invalid_argument("fit_geometry: alpha must be positive");
  if (d_prime < 1) throw std::invalid_argument("fit_geometry: d_prime must be >= 1");
  const std::size_t dim = z_o.front().dim();
  check_set(z_o, dim, "fit_geometry");
  check_set(z_wm, dim, "fit_geometry");

  const std::size_t n_union = z_o.size() + z_wm.size();
  const std::size_t max_rank = std::min(dim, n_union - 1);
  if (d_prime > max_rank) {
    warn_once("fit_geometry: d_prime " + std::to_string(d_prime) + " clamped to " + std::to_string(max_rank));
    d_prime = max_rank;
  }

  std::vector<FeatureVec> joint(z_o.begin(), z_o.end());
  joint.insert(joint.end(), z_wm.begin(), z_wm.end());
  const Eigen::MatrixXd x = stack_rows(joint);

  GeometryModel g;
  g.alpha = alpha;
  g.beta_mah = beta_mah;
  g.beta_ene = beta_ene;
  g.mu_ref = x.colwise().mean().transpose();
  const Eigen::MatrixXd xc = x.rowwise() - g.mu_ref.transpose();

  // Principal directions from the (2N x 2N) Gram matrix: W = Xc^T U diag(1/sqrt(lambda)).
  const Eigen::MatrixXd gram = xc * xc.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd& lambda = eig.eigenvalues();  // ascending
  const double scale = std::max(lambda.maxCoeff(), 0.0);
  const auto dp = static_cast<Eigen::Index>(d_prime);
  g.projection = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), dp);
  Eigen::Index filled = 0;
  for (Eigen::Index c = 0; c < dp; ++c) {
    const Eigen::Index src = lambda.size() - 1 - c;
    if (!(lambda(src) > 1e-12 * scale) || lambda(src) <= 0.0) break;
    Eigen::VectorXd w = xc.transpose() * eig.eigenvectors().col(src) / std::sqrt(lambda(src));
    w.normalize();
    canonical_sign(w);
    g.projection.col(filled++) = w;
  }
  complete_basis(g.projection, filled);

  auto class_fit = [&](std::span<const FeatureVec> set, Eigen::VectorXd& mean, Eigen::MatrixXd& sigma) {
    const Eigen::MatrixXd rows = stack_rows(set);
    const Eigen::MatrixXd projected = (rows.rowwise() - g.mu_ref.transpose()) * g.projection;
    mean = projected.colwise().mean().transpose();
    sigma = class_covariance(projected, mean, alpha);
  };
  class_fit(z_o, g.mu_o, g.sigma_o);
  class_fit(z_wm, g.mu_wm, g.sigma_wm);
  return g;
}

double squared_mahalanobis(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& covariance) {
  const Eigen::VectorXd diff = x - mean;
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("squared_mahalanobis: covariance is not positive definite");
  return diff.dot(llt.solve(diff));
}

double mahalanobis_contrast(const GeometryModel& geom, const FeatureVec& z_q) {
  const Eigen::VectorXd zq = geom.project(z_q);
  return squared_mahalanobis(zq, geom.mu_o, geom.sigma_o) - squared_mahalanobis(zq, geom.mu_wm, geom.sigma_wm);
}

double energy_distance(const FeatureVec& z_q, std::span<const FeatureVec> set) {
  if (set.empty()) throw std::invalid_argument("energy_distance: empty set");
  check_set(set, z_q.dim(), "energy_distance");
  const double n = static_cast<double>(set.size());
  double cross = 0.0;
  for (const auto& z : set) cross += (z_q.values() - z.values()).norm();
  double within = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t j = i + 1; j < set.size(); ++j) within += (set[i].values() - set[j].values()).norm();
  // Ordered pairs count each unordered pair twice; the diagonal contributes 0.
  return 2.0 * cross / n - 2.0 * within / (n * n);
}

double energy_contrast(const FeatureVec& z_q, std::span<const FeatureVec> z_o,
                       std::span<const FeatureVec> z_wm) {
  return energy_distance(z_q, z_o) - energy_distance(z_q, z_wm);
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double normalize_score(double delta, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("normalize_score: beta must be positive");
  return sigmoid(beta * delta);
}

double rank_tendency(double f_query, std::span<const double> f_o, std::span<const double> f_wm,
                     double epsilon) {
  if (f_o.empty() || f_wm.empty()) throw std::invalid_argument("rank_tendency: empty reference set");
  const double mean_o = std::accumulate(f_o.begin(), f_o.end(), 0.0) / static_cast<double>(f_o.size());
  const double mean_wm = std::accumulate(f_wm.begin(), f_wm.end(), 0.0) / static_cast<double>(f_wm.size());
  const double rho = (mean_wm - mean_o) >= 0.0 ? 1.0 : -1.0;  // sign(0) := +1
  const double q = rho * f_query;
  std::size_t below_wm = 0;
  for (double f : f_wm) below_wm += (rho * f <= q);
  std::size_t above_o = 0;
  for (double f : f_o) above_o += (rho * f >= q);
  const double p_wm = (1.0 + static_cast<double>(below_wm)) / (static_cast<double>(f_wm.size()) + 1.0);
  const double p_o = (1.0 + static_cast<double>(above_o)) / (static_cast<double>(f_o.size()) + 1.0);
  return p_wm / (p_wm + p_o + epsilon);
}

double adaptive_rank(const NLLStats& nll_q, std::span<const NLLStats> nll_o,
                     std::span<const NLLStats> nll_wm, double lambda, double epsilon) {
  if (nll_o.empty() || nll_wm.empty()) throw std::invalid_argument("adaptive_rank: empty reference set");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("adaptive_rank: lambda must lie in [0,1]");
  std::vector<double> ge_o, lv_o, ge_wm, lv_wm;
  for (const auto& s : nll_o) {
    ge_o.push_back(s.ge);
    lv_o.push_back(s.lv);
  }
  for (const auto& s : nll_wm) {
    ge_wm.push_back(s.ge);
    lv_wm.push_back(s.lv);
  }
  const double s_ge = rank_tendency(nll_q.ge, ge_o, ge_wm, epsilon);
  const double s_lv = rank_tendency(nll_q.lv, lv_o, lv_wm, epsilon);
  return lambda * s_ge + (1.0 - lambda) * s_lv;
}

std::size_t resolve_k(const MeasureParams& params, std::size_t n_refs) {
  if (params.k > 0) return params.k;
  std::size_t k = n_refs / 2;
  if (k % 2 == 0) k = k > 0 ? k - 1 : 0;
  return std::max<std::size_t>(k, 1);
}

std::size_t resolve_d_prime(const MeasureParams& params, std::size_t n_refs, std::size_t dim) {
  std::size_t dp = params.d_prime;
  if (dp == 0) dp = std::max<std::size_t>(1, std::min<std::size_t>(8, 2 * n_refs >= 2 ? 2 * n_refs - 2 : 1));
  const std::size_t cap = std::min(dim, 2 * n_refs - 1);
  return std::max<std::size_t>(1, std::min(dp, cap));
}

RawScores raw_scores(const ReferenceBundle& bundle, const MeasureParams& params) {
  bundle.validate();
  const std::size_t n = bundle.size();
  RawScores raw;
  raw.a_loc = local_consistency(bundle.z_q, bundle.z_o, bundle.z_wm, resolve_k(params, n));
  raw.a_ada = adaptive_rank(bundle.nll_q, bundle.nll_o, bundle.nll_wm, params.lambda, params.epsilon);
  if (n >= 2) {
    const auto geom = fit_geometry(bundle.z_o, bundle.z_wm, resolve_d_prime(params, n, bundle.z_q.dim()),
                                   params.alpha_shrink, params.beta_mah, params.beta_ene);
    raw.delta_mah = mahalanobis_contrast(geom, bundle.z_q);
    raw.delta_ene = energy_contrast(bundle.z_q, bundle.z_o, bundle.z_wm);
    raw.geometry = true;
  }
  return raw;
}

ScoreVector normalize_scores(const RawScores& raw, double beta_mah, double beta_ene) {
  ScoreVector s;
  s.a_loc = raw.a_loc;
  s.a_ada = raw.a_ada;
  if (raw.geometry) {
    s.a_mah = normalize_score(raw.delta_mah, beta_mah);
    s.a_ene = normalize_score(raw.delta_ene, beta_ene);
  }
  return s;
}

ScoreVector score_vector(const ReferenceBundle& bundle, const MeasureParams& params) {
  return normalize_scores(raw_scores(bundle, params), params.beta_mah, params.beta_ene);
}

}  // namespace wmaudit
