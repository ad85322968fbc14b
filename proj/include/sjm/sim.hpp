#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sjm/errors.hpp"
#include "sjm/estimator.hpp"
#include "sjm/parallel.hpp"
#include "sjm/perturb.hpp"
#include "sjm/rng.hpp"
#include "sjm/spline.hpp"
#include "sjm/trial_data.hpp"

namespace sjm {

enum class Setting { s1 = 1, s2 = 2, s3 = 3 };

// Simulation-study configuration. The terminal event follows
// log(D/10) = -eta_true * A + eps with eps extreme-value (minimum), so
// exp(eps) ~ Exp(1), the baseline cumulative hazard is t/10 and the
// treatment log-hazard ratio is eta_true. Settings differ in the
// longitudinal model:
//   1: Y = b0 + b1 (t/4) + slope_coeff A (t/4) + e,        b independent of D
//   2: Y = b0 + (b1 - 5v)(t/4) + slope_coeff A (t/4) + e,  v = exp(eps) shared with D
//   3: Y = u + 0.2 v t + beta0 A + 10 log(1+t) A + e,      v shared with D
struct ScenarioConfig {
  Setting setting = Setting::s1;
  int n = 200;
  double eta_true = 0.5;
  double slope_coeff = 8.0;  // settings 1-2; the A*t coefficient is slope_coeff/4
  double beta0_s3 = 0.0;     // setting 3 treatment main effect (not stated by the design; 0)
  double tau = 15.0;
  double censor_lo = 5.0;
  double censor_hi = 25.0;
  double censor_cap = 15.0;
  double visit_jitter = 0.0;  // half-width of optional uniform jitter around integer visits
  std::uint64_t seed = 0;
};

// Per-subject generator internals exposed for calibration checks.
struct GenDiagnostics {
  std::vector<double> frailty;     // v_i = exp(eps_i)
  std::vector<double> event_time;  // D_i (uncensored)
};

// Terminal event draw: D = 10 * U * exp(-eta_true * a) with U ~ Exp(1).
inline double gen_terminal(int a, double eta_true, Rng& rng) {
  return 10.0 * rng.exponential() * std::exp(-eta_true * static_cast<double>(a));
}

inline TrialData gen_setting(const ScenarioConfig& config, GenDiagnostics* diagnostics = nullptr) {
  if (config.n < 2) throw ConfigError("simulation needs at least 2 subjects");
  if (!(config.tau > 0.0)) throw ConfigError("tau must be positive");

  Rng rng(config.seed);
  const std::size_t n = static_cast<std::size_t>(config.n);
  int id_width = 1;
  for (std::size_t v = n; v >= 10; v /= 10) ++id_width;

  std::vector<Subject> subjects(n);
  std::vector<std::vector<Visit>> visits(n);
  if (diagnostics) {
    diagnostics->frailty.assign(n, 0.0);
    diagnostics->event_time.assign(n, 0.0);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const int a = rng.bernoulli(0.5) ? 1 : 0;
    const double u = rng.exponential();  // exp(eps): shared frailty in settings 2-3
    const double d = 10.0 * u * std::exp(-config.eta_true * a);
    const double censor = std::min(rng.uniform(config.censor_lo, config.censor_hi),
                                   config.censor_cap);
    Subject& s = subjects[i];
    std::string id = std::to_string(i + 1);
    s.id = std::string(static_cast<std::size_t>(id_width) - id.size(), '0') + id;
    s.covariates = Eigen::VectorXd::Constant(1, static_cast<double>(a));
    s.followup_time = std::min(d, censor);
    s.event = d < censor;
    if (diagnostics) {
      diagnostics->frailty[i] = u;
      diagnostics->event_time[i] = d;
    }

    double b0 = 0.0, b1 = 0.0, level = 0.0, subject_shift = 0.0;
    switch (config.setting) {
      case Setting::s1:
      case Setting::s2:
        b0 = std::max(rng.normal(50.0, 16.0), 15.0);
        b1 = rng.normal(-2.0, 2.75);
        break;
      case Setting::s3:
        level = rng.exponential();      // u_i
        subject_shift = rng.normal();   // mean of e_i(t)
        break;
    }

    // One visit at each integer time while the subject is under observation.
    for (double t = 0.0; t < s.followup_time && t <= config.tau; t += 1.0) {
      double visit_time = t;
      if (config.visit_jitter > 0.0) {
        visit_time = t + rng.uniform(-config.visit_jitter, config.visit_jitter);
        if (visit_time < 0.0) visit_time = 0.0;
        if (!(visit_time < s.followup_time)) continue;
      }
      double mean = 0.0, noise = 0.0;
      switch (config.setting) {
        case Setting::s1:
          mean = b0 + b1 * (visit_time / 4.0) +
                 config.slope_coeff * a * (visit_time / 4.0);
          noise = rng.normal() * std::sqrt(std::abs(0.667 * mean));
          break;
        case Setting::s2:
          mean = b0 + (b1 - 5.0 * u) * (visit_time / 4.0) +
                 config.slope_coeff * a * (visit_time / 4.0);
          noise = rng.normal() * std::sqrt(std::abs(0.667 * mean));
          break;
        case Setting::s3:
          mean = level + 0.2 * u * visit_time + config.beta0_s3 * a +
                 10.0 * std::log1p(visit_time) * a;
          noise = subject_shift + rng.normal() * 0.2 * visit_time;
          break;
      }
      visits[i].push_back(Visit{visit_time, mean + noise});
    }
  }
  return TrialData::from_parts(std::move(subjects), std::move(visits), config.tau);
}

struct McRow {
  std::string name;
  double truth = 0.0;
  double est = 0.0;   // mean point estimate
  double ese = 0.0;   // empirical SD of the point estimates
  double ase = 0.0;   // mean resampling SE
  double cp = 0.0;    // 95% CI coverage
  double mse = 0.0;   // mean squared error
};

struct McReport {
  std::vector<McRow> rows;
  int replicates = 0;
  int failures = 0;
};

struct McOptions {
  int replicates = 1000;
  PerturbConfig perturb;  // per-replicate resampling settings (seed derived per replicate)
  int threads = 0;
};

namespace detail {

struct ParamSample {
  std::vector<double> est;
  std::vector<double> se;
};

inline McRow aggregate(const std::string& name, double truth, const ParamSample& sample) {
  McRow row;
  row.name = name;
  row.truth = truth;
  const std::size_t r = sample.est.size();
  double mean = 0.0;
  for (double e : sample.est) mean += e;
  mean /= static_cast<double>(r);
  row.est = mean;
  double ss = 0.0, mse = 0.0, ase = 0.0, cover = 0.0;
  for (std::size_t k = 0; k < r; ++k) {
    ss += (sample.est[k] - mean) * (sample.est[k] - mean);
    mse += (sample.est[k] - truth) * (sample.est[k] - truth);
    ase += sample.se[k];
    cover += std::abs(sample.est[k] - truth) <= 1.959963984540054 * sample.se[k] ? 1.0 : 0.0;
  }
  row.ese = r > 1 ? std::sqrt(ss / static_cast<double>(r - 1)) : 0.0;
  row.mse = mse / static_cast<double>(r);
  row.ase = ase / static_cast<double>(r);
  row.cp = cover / static_cast<double>(r);
  return row;
}

}  // namespace detail

// Monte-Carlo study of the linear-design estimator under settings 1-2,
// reporting the eta / beta0 / beta1-over-4 rows with EST, ESE, ASE, CP and
// MSE. Per-replicate failures are dropped; more than 5% raises StudyError.
inline McReport run_mc(const ScenarioConfig& config, const DesignSpec& spec,
                       const McOptions& options) {
  if (options.replicates < 2) {
    throw ConfigError("a study needs at least 2 replicates (ESE is undefined otherwise)");
  }
  if (config.setting == Setting::s3) {
    throw ConfigError("setting 3 is a curve study; use run_mc_curve");
  }
  if (spec.kind() != DesignSpec::Kind::linear) {
    throw ConfigError("the tabulated study uses the linear design");
  }

  const std::size_t r_total = static_cast<std::size_t>(options.replicates);
  struct Slot {
    bool ok = false;
    double eta = 0.0, eta_se = 0.0;
    Eigen::VectorXd beta, beta_se;
  };
  std::vector<Slot> slots(r_total);

  parallel_for(r_total, options.threads, [&](std::size_t rep) {
    ScenarioConfig rep_config = config;
    rep_config.seed = Rng::derive(config.seed, rep, 1);
    PerturbConfig rep_perturb = options.perturb;
    rep_perturb.seed = Rng::derive(config.seed, rep, 2);
    rep_perturb.threads = 1;  // replicate level already runs in parallel
    try {
      const TrialData data = gen_setting(rep_config);
      const SjmFit fit = fit_sjm(data, spec);
      const PerturbResult perturbed = perturb_fit(data, spec, fit, rep_perturb);
      Slot& slot = slots[rep];
      slot.eta = fit.cox.eta_hat[0];
      slot.eta_se = perturbed.se_eta[0];
      slot.beta = fit.beta_hat;
      slot.beta_se = perturbed.se_beta;
      slot.ok = true;
    } catch (const Error&) {
      // dropped; counted below
    }
  });

  McReport report;
  report.replicates = options.replicates;
  detail::ParamSample eta_sample, beta0_sample, beta1_sample;
  for (const Slot& slot : slots) {
    if (!slot.ok) {
      ++report.failures;
      continue;
    }
    eta_sample.est.push_back(slot.eta);
    eta_sample.se.push_back(slot.eta_se);
    beta0_sample.est.push_back(slot.beta[0]);
    beta0_sample.se.push_back(slot.beta_se[0]);
    beta1_sample.est.push_back(slot.beta[1]);
    beta1_sample.se.push_back(slot.beta_se[1]);
  }
  if (report.failures * 20 > options.replicates) {
    throw StudyError("more than 5% of study replicates failed (" +
                     std::to_string(report.failures) + " of " +
                     std::to_string(options.replicates) + ")");
  }

  report.rows.push_back(detail::aggregate("eta", config.eta_true, eta_sample));
  report.rows.push_back(detail::aggregate("beta0", 0.0, beta0_sample));
  // The A*t coefficient; truth slope_coeff/4 because Y carries slope_coeff * A * (t/4).
  report.rows.push_back(
      detail::aggregate("beta1/4", config.slope_coeff / 4.0, beta1_sample));
  return report;
}

struct CurvePoint {
  double t = 0.0;
  double truth = 0.0;
  double est = 0.0;
  double ese = 0.0;
  double ase = 0.0;
  double cp = 0.0;
};

struct CurveReport {
  std::vector<CurvePoint> points;
  int replicates = 0;
  int failures = 0;
};

// Basis recipe for the per-replicate spline fit of the curve study.
struct BasisSpec {
  int degree = 3;
  int n_interior_knots = 3;
};

// Monte-Carlo study of the nonlinear slope effect under setting 3. Each
// replicate builds its own quantile-knot basis, fits the spline design and
// resamples pointwise bands; the report aggregates against the design truth
// 10 log(1+t)/t.
inline CurveReport run_mc_curve(const ScenarioConfig& config, const BasisSpec& basis_spec,
                                std::span<const double> grid, const McOptions& options) {
  if (options.replicates < 2) {
    throw ConfigError("a study needs at least 2 replicates (ESE is undefined otherwise)");
  }
  if (config.setting != Setting::s3) {
    throw ConfigError("the curve study is defined for setting 3");
  }
  for (double t : grid) {
    if (!(t > 0.0) || !(t <= config.tau)) {
      throw DomainError("curve grid must lie in (0, tau]");
    }
  }

  const std::size_t r_total = static_cast<std::size_t>(options.replicates);
  const std::size_t g = grid.size();
  struct Slot {
    bool ok = false;
    std::vector<double> est, se;
  };
  std::vector<Slot> slots(r_total);

  parallel_for(r_total, options.threads, [&](std::size_t rep) {
    ScenarioConfig rep_config = config;
    rep_config.seed = Rng::derive(config.seed, rep, 1);
    PerturbConfig rep_perturb = options.perturb;
    rep_perturb.seed = Rng::derive(config.seed, rep, 2);
    rep_perturb.threads = 1;
    try {
      const TrialData data = gen_setting(rep_config);
      const SplineBasis basis =
          make_basis(data, basis_spec.degree, basis_spec.n_interior_knots);
      const DesignSpec spec = DesignSpec::spline(data.covariate_dim(), basis);
      const SjmFit fit = fit_sjm(data, spec);
      const PerturbResult perturbed = perturb_fit(data, spec, fit, rep_perturb);
      const EffectCurve curve = curve_bands(fit, perturbed, basis, grid);
      Slot& slot = slots[rep];
      slot.est = curve.delta_yslope;
      slot.se = curve.pointwise_se;
      slot.ok = true;
    } catch (const Error&) {
      // dropped; counted below
    }
  });

  CurveReport report;
  report.replicates = options.replicates;
  std::vector<detail::ParamSample> samples(g);
  for (const Slot& slot : slots) {
    if (!slot.ok) {
      ++report.failures;
      continue;
    }
    for (std::size_t k = 0; k < g; ++k) {
      samples[k].est.push_back(slot.est[k]);
      samples[k].se.push_back(slot.se[k]);
    }
  }
  if (report.failures * 20 > options.replicates) {
    throw StudyError("more than 5% of study replicates failed (" +
                     std::to_string(report.failures) + " of " +
                     std::to_string(options.replicates) + ")");
  }

  for (std::size_t k = 0; k < g; ++k) {
    const double t = grid[k];
    const double truth = 10.0 * std::log1p(t) / t;
    const McRow row = detail::aggregate("slope", truth, samples[k]);
    report.points.push_back(CurvePoint{t, truth, row.est, row.ese, row.ase, row.cp});
  }
  return report;
}

// CSV layout: param,truth,est,ese,ase,cp,mse
inline void write_mc_csv(const McReport& report, std::ostream& out) {
  out << "param,truth,est,ese,ase,cp,mse\n";
  for (const McRow& row : report.rows) {
    out << row.name << ',' << csv::format_double(row.truth) << ','
        << csv::format_double(row.est) << ',' << csv::format_double(row.ese) << ','
        << csv::format_double(row.ase) << ',' << csv::format_double(row.cp) << ','
        << csv::format_double(row.mse) << "\n";
  }
}

// CSV layout: t,truth,est,ese,ase,cp
inline void write_curve_report_csv(const CurveReport& report, std::ostream& out) {
  out << "t,truth,est,ese,ase,cp\n";
  for (const CurvePoint& p : report.points) {
    out << csv::format_double(p.t) << ',' << csv::format_double(p.truth) << ','
        << csv::format_double(p.est) << ',' << csv::format_double(p.ese) << ','
        << csv::format_double(p.ase) << ',' << csv::format_double(p.cp) << "\n";
  }
}

}  // namespace sjm
