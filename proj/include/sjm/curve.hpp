#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "sjm/csv.hpp"
#include "sjm/errors.hpp"
#include "sjm/estimator.hpp"
#include "sjm/spline.hpp"

namespace sjm {

// Treatment-effect curves from a spline fit:
//   delta_y(t)      = beta0 + g(t)      (effect on the outcome level)
//   delta_yslope(t) = g(t) / t          (effect on the outcome slope)
// pointwise_se and the 95% limits apply to the slope curve; they are zero
// until filled in by resampling.
struct EffectCurve {
  std::vector<double> grid;
  std::vector<double> delta_y;
  std::vector<double> delta_yslope;
  std::vector<double> pointwise_se;
  std::vector<double> lo95;
  std::vector<double> hi95;
};

namespace detail {

inline void check_curve_grid(std::span<const double> grid, const SplineBasis& basis) {
  if (grid.empty()) throw ConfigError("effect-curve grid is empty");
  for (double t : grid) {
    if (!(t > 0.0)) {
      throw DomainError("effect-curve grid must lie in (0, tau]; got t=" +
                        csv::format_double(t));
    }
    if (!(t <= basis.tmax())) {
      throw DomainError("effect-curve grid point t=" + csv::format_double(t) +
                        " lies beyond the basis boundary");
    }
  }
}

// g(t) = beta_spline' phi(t) for one fitted coefficient vector.
inline double spline_effect(const Eigen::VectorXd& beta, const SplineBasis& basis, double t) {
  const Eigen::VectorXd phi = basis(t);
  return beta.segment(1, static_cast<Eigen::Index>(basis.size())).dot(phi);
}

}  // namespace detail

inline EffectCurve effect_curve(const SjmFit& fit, const SplineBasis& basis,
                                std::span<const double> grid) {
  if (fit.design.kind() != DesignSpec::Kind::spline) {
    throw ConfigError("effect_curve requires a spline-design fit");
  }
  if (fit.design.basis().size() != basis.size()) {
    throw ConfigError("fit and basis disagree on the number of spline functions");
  }
  detail::check_curve_grid(grid, basis);

  EffectCurve curve;
  curve.grid.assign(grid.begin(), grid.end());
  curve.delta_y.reserve(grid.size());
  curve.delta_yslope.reserve(grid.size());
  for (double t : grid) {
    const double g = detail::spline_effect(fit.beta_hat, basis, t);
    curve.delta_y.push_back(fit.beta_hat[0] + g);
    curve.delta_yslope.push_back(g / t);
  }
  curve.pointwise_se.assign(grid.size(), 0.0);
  curve.lo95 = curve.delta_yslope;
  curve.hi95 = curve.delta_yslope;
  return curve;
}

// CSV layout: t,delta_y,delta_yslope,se_slope,lo95,hi95
inline void write_curve_csv(const EffectCurve& curve, std::ostream& out) {
  out << "t,delta_y,delta_yslope,se_slope,lo95,hi95\n";
  for (std::size_t k = 0; k < curve.grid.size(); ++k) {
    out << csv::format_double(curve.grid[k]) << ',' << csv::format_double(curve.delta_y[k])
        << ',' << csv::format_double(curve.delta_yslope[k]) << ','
        << csv::format_double(curve.pointwise_se[k]) << ',' << csv::format_double(curve.lo95[k])
        << ',' << csv::format_double(curve.hi95[k]) << "\n";
  }
}

}  // namespace sjm
