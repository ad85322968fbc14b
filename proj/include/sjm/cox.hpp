#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sjm/errors.hpp"
#include "sjm/step_function.hpp"
#include "sjm/trial_data.hpp"

namespace sjm {

struct CoxOptions {
  int max_iter = 50;
  double tol = 1e-8;  // convergence threshold on the max-abs score component
};

struct CoxFit {
  Eigen::VectorXd eta_hat;
  StepFunction baseline;        // Breslow cumulative baseline hazard
  Eigen::MatrixXd information;  // observed information at eta_hat
  double loglik = 0.0;
  int iterations = 0;
};

namespace detail {

inline void check_weights(const TrialData& data, std::span<const double> weights) {
  if (weights.empty()) return;
  if (weights.size() != data.n()) throw ConfigError("weight vector length must equal n");
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("subject weights must be positive");
  }
}

// Subjects ordered by descending follow-up time (ties broken by canonical
// index) so a single pass grows the risk set.
inline std::vector<std::size_t> risk_order(const TrialData& data) {
  std::vector<std::size_t> order(data.n());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ta = data.subject(a).followup_time;
    const double tb = data.subject(b).followup_time;
    if (ta != tb) return ta > tb;
    return a < b;
  });
  return order;
}

struct CoxSweep {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd info;
  std::vector<double> event_times;      // ascending
  std::vector<double> breslow_jumps;    // aligned with event_times
};

// One pass over the risk sets computing the weighted log partial likelihood,
// its gradient and observed information, and the Breslow increments. Tied
// event times use the Breslow convention: every event at time t sees the full
// risk set {j : T_j >= t}.
inline CoxSweep cox_sweep(const TrialData& data, const Eigen::VectorXd& eta,
                          std::span<const double> weights, bool want_derivs,
                          bool want_breslow) {
  const std::size_t n = data.n();
  const Eigen::Index p = eta.size();
  if (static_cast<std::size_t>(p) != data.covariate_dim()) {
    throw ConfigError("eta dimension does not match the covariate dimension");
  }
  check_weights(data, weights);
  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  std::vector<std::size_t> order = risk_order(data);

  CoxSweep sweep;
  sweep.score = Eigen::VectorXd::Zero(p);
  sweep.info = Eigen::MatrixXd::Zero(p, p);

  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd zbar(p);

  std::size_t k = 0;
  while (k < n) {
    const double t = data.subject(order[k]).followup_time;
    std::size_t group_end = k;
    while (group_end < n && data.subject(order[group_end]).followup_time == t) ++group_end;

    for (std::size_t m = k; m < group_end; ++m) {
      const Subject& s = data.subject(order[m]);
      const double e = weight(order[m]) * std::exp(eta.dot(s.covariates));
      s0 += e;
      s1.noalias() += e * s.covariates;
      if (want_derivs) s2.noalias() += e * (s.covariates * s.covariates.transpose());
    }

    double event_weight = 0.0;
    for (std::size_t m = k; m < group_end; ++m) {
      const Subject& s = data.subject(order[m]);
      if (!s.event) continue;
      const double w = weight(order[m]);
      event_weight += w;
      sweep.loglik += w * (eta.dot(s.covariates) - std::log(s0));
      if (want_derivs) {
        zbar = s1 / s0;
        sweep.score.noalias() += w * (s.covariates - zbar);
        sweep.info.noalias() += w * (s2 / s0 - zbar * zbar.transpose());
      }
    }
    if (want_breslow && event_weight > 0.0) {
      sweep.event_times.push_back(t);
      sweep.breslow_jumps.push_back(event_weight / s0);
    }
    k = group_end;
  }

  // The sweep ran in descending time; report jumps in ascending order.
  std::reverse(sweep.event_times.begin(), sweep.event_times.end());
  std::reverse(sweep.breslow_jumps.begin(), sweep.breslow_jumps.end());
  return sweep;
}

}  // namespace detail

inline double cox_loglik(const TrialData& data, const Eigen::VectorXd& eta,
                         std::span<const double> weights = {}) {
  return detail::cox_sweep(data, eta, weights, false, false).loglik;
}

// Exact analytic gradient and observed information of the log partial
// likelihood at eta.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> cox_score_and_info(
    const TrialData& data, const Eigen::VectorXd& eta, std::span<const double> weights = {}) {
  auto sweep = detail::cox_sweep(data, eta, weights, true, false);
  return {std::move(sweep.score), std::move(sweep.info)};
}

// Breslow estimator of the cumulative baseline hazard at the given eta:
// jumps d_k / sum_{T_j >= t_k} w_j exp(eta'Z_j) at each distinct event time.
inline StepFunction breslow(const TrialData& data, const Eigen::VectorXd& eta,
                            std::span<const double> weights = {}) {
  auto sweep = detail::cox_sweep(data, eta, weights, false, true);
  std::vector<double> cumulative(sweep.breslow_jumps.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < sweep.breslow_jumps.size(); ++k) {
    acc += sweep.breslow_jumps[k];
    cumulative[k] = acc;
  }
  return StepFunction(std::move(sweep.event_times), std::move(cumulative));
}

// Maximum partial likelihood fit by Newton-Raphson with step halving.
// Throws NoEventsError without events, NotIdentifiableError on singular
// information or when the iterate norm exceeds the separation guard, and
// NonConvergenceError (carrying the last iterate) past max_iter.
inline CoxFit fit_cox(const TrialData& data, CoxOptions options = {},
                      std::span<const double> weights = {}) {
  if (data.event_count() == 0) throw NoEventsError("no observed events; cannot fit Cox model");
  detail::check_weights(data, weights);

  const Eigen::Index p = static_cast<Eigen::Index>(data.covariate_dim());
  constexpr double iterate_cap = 50.0;  // separation guard on ||eta||_inf

  Eigen::VectorXd eta = Eigen::VectorXd::Zero(p);
  auto sweep = detail::cox_sweep(data, eta, weights, true, false);

  auto as_vector = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };

  int iter = 0;
  bool converged = sweep.score.cwiseAbs().maxCoeff() <= options.tol;
  while (!converged) {
    if (iter >= options.max_iter) {
      throw NonConvergenceError("Cox fit did not converge in " +
                                    std::to_string(options.max_iter) + " iterations",
                                as_vector(eta));
    }
    ++iter;

    Eigen::LLT<Eigen::MatrixXd> llt(sweep.info);
    if (llt.info() != Eigen::Success) {
      throw NotIdentifiableError(
          "singular Cox information matrix (constant covariate in risk sets?)");
    }
    const Eigen::VectorXd direction = llt.solve(sweep.score);
    if (!direction.allFinite()) {
      throw NotIdentifiableError("degenerate Cox information matrix");
    }

    // Near the optimum a full Newton step improves the objective by less
    // than the rounding noise of the log likelihood, so allow that much.
    // Candidates that overflow the risk sums produce a -inf/NaN likelihood
    // and fall through to a shorter step.
    const double slack = 1e-10 * (1.0 + std::abs(sweep.loglik));
    double step = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 100; ++halving) {
      const Eigen::VectorXd candidate = eta + step * direction;
      const double candidate_ll = cox_loglik(data, candidate, weights);
      if (std::isfinite(candidate_ll) && candidate_ll >= sweep.loglik - slack) {
        eta = candidate;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      throw NonConvergenceError("Cox step halving failed to improve the log likelihood",
                                as_vector(eta));
    }
    if (eta.cwiseAbs().maxCoeff() > iterate_cap) {
      throw NotIdentifiableError(
          "Cox iterates diverged (likely separation in the event model)");
    }
    sweep = detail::cox_sweep(data, eta, weights, true, false);
    converged = sweep.score.cwiseAbs().maxCoeff() <= options.tol;
  }

  Eigen::LLT<Eigen::MatrixXd> llt(sweep.info);
  if (llt.info() != Eigen::Success) {
    throw NotIdentifiableError("Cox information is not positive definite at the optimum");
  }

  CoxFit fit;
  fit.eta_hat = std::move(eta);
  fit.information = std::move(sweep.info);
  fit.loglik = sweep.loglik;
  fit.iterations = iter;
  fit.baseline = breslow(data, fit.eta_hat, weights);
  return fit;
}

}  // namespace sjm
