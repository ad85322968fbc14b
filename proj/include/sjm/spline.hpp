#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sjm/csv.hpp"
#include "sjm/errors.hpp"
#include "sjm/trial_data.hpp"

namespace sjm {

// B-spline basis on [0, tmax] whose functions all vanish exactly at t = 0.
//
// A clamped B-spline family of the given degree has n_interior + degree + 1
// functions; only the first is nonzero at 0 (where it equals 1). Dropping it
// leaves K = n_interior + degree functions that are structurally zero at the
// origin and span every spline on the knots that vanishes there. That anchors
// g(0) = 0, which is what identifies the treatment-effect intercept
// separately from the time-varying part.
class SplineBasis {
 public:
  SplineBasis(int degree, std::vector<double> interior_knots, double tmax)
      : degree_(degree), tmax_(tmax) {
    if (degree < 1) throw ConfigError("spline degree must be at least 1");
    if (!(tmax > 0.0)) throw ConfigError("spline boundary must be positive");
    for (std::size_t k = 0; k < interior_knots.size(); ++k) {
      const double knot = interior_knots[k];
      if (!(knot > 0.0) || !(knot < tmax)) {
        throw ConfigError("interior knot " + csv::format_double(knot) +
                          " is outside (0, tmax)");
      }
      if (k > 0 && !(knot > interior_knots[k - 1])) {
        throw ConfigError("interior knots must be strictly increasing");
      }
    }
    knots_.assign(static_cast<std::size_t>(degree + 1), 0.0);
    knots_.insert(knots_.end(), interior_knots.begin(), interior_knots.end());
    knots_.insert(knots_.end(), static_cast<std::size_t>(degree + 1), tmax);
    interior_ = std::move(interior_knots);
    size_ = interior_.size() + static_cast<std::size_t>(degree);
  }

  std::size_t size() const noexcept { return size_; }  // K
  int degree() const noexcept { return degree_; }
  double tmax() const noexcept { return tmax_; }
  const std::vector<double>& interior_knots() const noexcept { return interior_; }

  // Evaluates the K basis functions at t into out. Throws DomainError outside
  // [0, tmax] (no extrapolation); the right boundary is closed.
  void evaluate(double t, std::span<double> out) const {
    if (out.size() != size_) throw ConfigError("spline output span has wrong length");
    if (!(t >= 0.0) || !(t <= tmax_)) {
      throw DomainError("spline basis evaluated at t=" + csv::format_double(t) +
                        " outside [0, " + csv::format_double(tmax_) + "]");
    }
    std::fill(out.begin(), out.end(), 0.0);

    // Knot span containing t; t == tmax falls into the last non-empty span.
    const int d = degree_;
    std::size_t span = static_cast<std::size_t>(d);
    const std::size_t last_span = knots_.size() - static_cast<std::size_t>(d) - 2;
    while (span < last_span && t >= knots_[span + 1]) ++span;

    // Cox-de Boor triangle: values[m] = B_{span-d+m}(t) for m = 0..d.
    double values[kMaxDegree + 1];
    double left[kMaxDegree + 1];
    double right[kMaxDegree + 1];
    values[0] = 1.0;
    for (int j = 1; j <= d; ++j) {
      left[j] = t - knots_[span + 1 - static_cast<std::size_t>(j)];
      right[j] = knots_[span + static_cast<std::size_t>(j)] - t;
      double saved = 0.0;
      for (int m = 0; m < j; ++m) {
        const double denom = right[m + 1] + left[j - m];
        const double term = denom > 0.0 ? values[m] / denom : 0.0;
        values[m] = saved + right[m + 1] * term;
        saved = left[j - m] * term;
      }
      values[j] = saved;
    }

    for (int m = 0; m <= d; ++m) {
      // Family index of this nonzero function; index 0 is the dropped one.
      const std::ptrdiff_t family = static_cast<std::ptrdiff_t>(span) - d + m;
      if (family >= 1 && static_cast<std::size_t>(family) <= size_) {
        out[static_cast<std::size_t>(family - 1)] = values[m];
      }
    }
  }

  Eigen::VectorXd operator()(double t) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(size_));
    evaluate(t, std::span<double>(out.data(), size_));
    return out;
  }

 private:
  static constexpr int kMaxDegree = 16;

  int degree_;
  double tmax_;
  std::size_t size_;
  std::vector<double> knots_;
  std::vector<double> interior_;
};

// Builds the default basis for a dataset: boundary [0, tau], interior knots at
// evenly spaced quantiles of the pooled visit times (type-7 interpolation).
inline SplineBasis make_basis(const TrialData& data, int degree = 3, int n_interior_knots = 3) {
  if (degree < 1) throw ConfigError("spline degree must be at least 1");
  if (n_interior_knots < 0) throw ConfigError("number of interior knots cannot be negative");

  std::vector<double> pooled;
  pooled.reserve(data.total_visits());
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (const Visit& v : data.visits(i)) pooled.push_back(v.time);
  }
  std::sort(pooled.begin(), pooled.end());

  std::size_t distinct = 0;
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    if (k == 0 || pooled[k] != pooled[k - 1]) ++distinct;
  }
  if (distinct < static_cast<std::size_t>(n_interior_knots)) {
    throw ConfigError("not enough distinct visit times to place " +
                      std::to_string(n_interior_knots) + " interior knots");
  }

  std::vector<double> interior;
  interior.reserve(static_cast<std::size_t>(n_interior_knots));
  for (int k = 1; k <= n_interior_knots; ++k) {
    const double p = static_cast<double>(k) / (n_interior_knots + 1);
    const double pos = p * static_cast<double>(pooled.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const std::size_t hi = std::min(lo + 1, pooled.size() - 1);
    interior.push_back(pooled[lo] + frac * (pooled[hi] - pooled[lo]));
  }
  for (std::size_t k = 0; k < interior.size(); ++k) {
    if (!(interior[k] > 0.0) || !(interior[k] < data.tau()) ||
        (k > 0 && !(interior[k] > interior[k - 1]))) {
      throw ConfigError("quantile knots collide or fall on the boundary; "
                        "use fewer interior knots");
    }
  }
  return SplineBasis(degree, std::move(interior), data.tau());
}

}  // namespace sjm
