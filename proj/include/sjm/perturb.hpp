#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sjm/curve.hpp"
#include "sjm/errors.hpp"
#include "sjm/estimator.hpp"
#include "sjm/parallel.hpp"
#include "sjm/rng.hpp"

namespace sjm {

// Perturbation-resampling configuration. The weight law must be positive with
// unit mean and unit variance; the degenerate unit law (all weights 1) exists
// for exactness tests.
struct PerturbConfig {
  int replicates = 500;  // B
  std::uint64_t seed = 0;
  enum class WeightLaw { exponential, unit } law = WeightLaw::exponential;
  int threads = 0;  // 0 = hardware concurrency
};

struct PerturbResult {
  Eigen::MatrixXd beta_star;  // effective replicates x design dim
  Eigen::MatrixXd eta_star;   // effective replicates x covariate dim
  Eigen::VectorXd se_beta;
  Eigen::VectorXd se_eta;
  Eigen::MatrixXd ci_beta;  // columns: lower, upper (point +- 1.96 se)
  Eigen::MatrixXd ci_eta;
  int requested = 0;
  int failures = 0;
};

namespace detail {

inline std::vector<double> draw_weights(std::size_t n, PerturbConfig::WeightLaw law, Rng& rng) {
  std::vector<double> w(n, 1.0);
  if (law == PerturbConfig::WeightLaw::exponential) {
    for (std::size_t i = 0; i < n; ++i) {
      // rng.exponential() can round to exactly 0; the fits need w > 0.
      w[i] = std::max(rng.exponential(), 1e-12);
    }
  }
  return w;
}

inline Eigen::VectorXd column_sd(const Eigen::MatrixXd& m) {
  const Eigen::Index rows = m.rows();
  Eigen::VectorXd sd = Eigen::VectorXd::Zero(m.cols());
  if (rows < 2) return sd;
  const Eigen::VectorXd mean = m.colwise().mean();
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    sd[c] = std::sqrt((m.col(c).array() - mean[c]).square().sum() /
                      static_cast<double>(rows - 1));
  }
  return sd;
}

}  // namespace detail

// Refits the whole pipeline (weighted Cox, weighted Breslow, weighted
// estimating equation) under independent positive subject weights and reports
// the spread of the replicated estimates. Failed replicates are dropped and
// counted; more than 10% failures raises ResamplingError.
inline PerturbResult perturb_fit(const TrialData& data, const DesignSpec& spec,
                                 const SjmFit& point, const PerturbConfig& config) {
  if (config.replicates < 2) throw ConfigError("perturbation needs at least 2 replicates");

  const std::size_t b_total = static_cast<std::size_t>(config.replicates);
  const std::size_t n = data.n();
  const Assembler assembler(data, spec);

  struct Slot {
    bool ok = false;
    Eigen::VectorXd beta;
    Eigen::VectorXd eta;
  };
  std::vector<Slot> slots(b_total);

  parallel_for(b_total, config.threads, [&](std::size_t b) {
    Rng rng(Rng::derive(config.seed, b));
    const std::vector<double> w = detail::draw_weights(n, config.law, rng);
    try {
      SjmFit fit = fit_sjm_weighted(assembler, data, CoxOptions{}, w);
      slots[b].beta = std::move(fit.beta_hat);
      slots[b].eta = std::move(fit.cox.eta_hat);
      slots[b].ok = true;
    } catch (const Error&) {
      // counted below
    }
  });

  PerturbResult result;
  result.requested = config.replicates;
  std::size_t effective = 0;
  for (const Slot& s : slots) effective += s.ok ? 1 : 0;
  result.failures = static_cast<int>(b_total - effective);
  if (result.failures * 10 > config.replicates) {
    throw ResamplingError("perturbation resampling failed in " +
                          std::to_string(result.failures) + " of " +
                          std::to_string(config.replicates) + " replicates");
  }
  if (effective < 2) throw ResamplingError("fewer than 2 usable perturbation replicates");

  result.beta_star.resize(static_cast<Eigen::Index>(effective), point.beta_hat.size());
  result.eta_star.resize(static_cast<Eigen::Index>(effective), point.cox.eta_hat.size());
  Eigen::Index row = 0;
  for (const Slot& s : slots) {
    if (!s.ok) continue;
    result.beta_star.row(row) = s.beta;
    result.eta_star.row(row) = s.eta;
    ++row;
  }

  result.se_beta = detail::column_sd(result.beta_star);
  result.se_eta = detail::column_sd(result.eta_star);

  const double z = 1.959963984540054;  // 97.5% normal quantile
  result.ci_beta.resize(point.beta_hat.size(), 2);
  result.ci_beta.col(0) = point.beta_hat - z * result.se_beta;
  result.ci_beta.col(1) = point.beta_hat + z * result.se_beta;
  result.ci_eta.resize(point.cox.eta_hat.size(), 2);
  result.ci_eta.col(0) = point.cox.eta_hat - z * result.se_eta;
  result.ci_eta.col(1) = point.cox.eta_hat + z * result.se_eta;
  return result;
}

// Maps replicated spline coefficients through the basis to pointwise standard
// errors of the slope curve.
inline EffectCurve curve_bands(const SjmFit& point, const PerturbResult& perturbed,
                               const SplineBasis& basis, std::span<const double> grid) {
  EffectCurve curve = effect_curve(point, basis, grid);
  const Eigen::Index b_eff = perturbed.beta_star.rows();
  const double z = 1.959963984540054;
  for (std::size_t k = 0; k < curve.grid.size(); ++k) {
    const double t = curve.grid[k];
    Eigen::VectorXd slopes(b_eff);
    for (Eigen::Index b = 0; b < b_eff; ++b) {
      const Eigen::VectorXd beta = perturbed.beta_star.row(b);
      slopes[b] = detail::spline_effect(beta, basis, t) / t;
    }
    double se = 0.0;
    if (b_eff >= 2) {
      const double mean = slopes.mean();
      se = std::sqrt((slopes.array() - mean).square().sum() / static_cast<double>(b_eff - 1));
    }
    curve.pointwise_se[k] = se;
    curve.lo95[k] = curve.delta_yslope[k] - z * se;
    curve.hi95[k] = curve.delta_yslope[k] + z * se;
  }
  return curve;
}

inline EffectCurve curve_bands(const TrialData& data, const DesignSpec& spec,
                               const SplineBasis& basis, std::span<const double> grid,
                               const PerturbConfig& config) {
  const SjmFit point = fit_sjm(data, spec);
  const PerturbResult perturbed = perturb_fit(data, spec, point, config);
  return curve_bands(point, perturbed, basis, grid);
}

}  // namespace sjm
