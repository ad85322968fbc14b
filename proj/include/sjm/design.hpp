#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sjm/errors.hpp"
#include "sjm/spline.hpp"
#include "sjm/trial_data.hpp"

namespace sjm {

// Recipe for the time-varying regressor vector Z~(t). Layouts:
//   linear:       [A, A*t,                    Z_-1...]
//   change_point: [A, A*t, A*max(t - t*, 0),  Z_-1...]
//   spline:       [A, A*phi_1(t)..A*phi_K(t), Z_-1...]
// covariate_dim is the length of the raw covariate vector Z (A first).
class DesignSpec {
 public:
  enum class Kind { linear, change_point, spline };

  static DesignSpec linear(std::size_t covariate_dim) {
    check_dim(covariate_dim);
    DesignSpec d;
    d.kind_ = Kind::linear;
    d.covariate_dim_ = covariate_dim;
    return d;
  }

  static DesignSpec change_point(std::size_t covariate_dim, double t_star, double tau) {
    check_dim(covariate_dim);
    if (!(t_star > 0.0) || !(t_star < tau)) {
      throw ConfigError("change point t* must lie strictly inside (0, tau)");
    }
    DesignSpec d;
    d.kind_ = Kind::change_point;
    d.covariate_dim_ = covariate_dim;
    d.t_star_ = t_star;
    return d;
  }

  static DesignSpec spline(std::size_t covariate_dim, SplineBasis basis) {
    check_dim(covariate_dim);
    DesignSpec d;
    d.kind_ = Kind::spline;
    d.covariate_dim_ = covariate_dim;
    d.basis_ = std::make_shared<const SplineBasis>(std::move(basis));
    return d;
  }

  Kind kind() const noexcept { return kind_; }
  std::size_t covariate_dim() const noexcept { return covariate_dim_; }
  double t_star() const noexcept { return t_star_; }

  const SplineBasis& basis() const {
    if (!basis_) throw ConfigError("design has no spline basis");
    return *basis_;
  }

  // Dimension of Z~(t).
  std::size_t dim() const noexcept {
    const std::size_t extra = covariate_dim_ - 1;
    switch (kind_) {
      case Kind::linear:
        return 2 + extra;
      case Kind::change_point:
        return 3 + extra;
      case Kind::spline:
        return 1 + basis_->size() + extra;
    }
    return 0;
  }

  void build(const Subject& subject, double t, std::span<double> out) const {
    if (out.size() != dim()) throw ConfigError("design output span has wrong length");
    const double a = subject.covariates[0];
    std::size_t pos = 0;
    out[pos++] = a;
    switch (kind_) {
      case Kind::linear:
        out[pos++] = a * t;
        break;
      case Kind::change_point:
        out[pos++] = a * t;
        out[pos++] = a * std::max(t - t_star_, 0.0);
        break;
      case Kind::spline: {
        const std::size_t K = basis_->size();
        basis_->evaluate(t, out.subspan(pos, K));
        for (std::size_t k = 0; k < K; ++k) out[pos + k] *= a;
        pos += K;
        break;
      }
    }
    for (std::size_t k = 1; k < covariate_dim_; ++k) {
      out[pos++] = subject.covariates[static_cast<Eigen::Index>(k)];
    }
  }

  std::string description() const {
    switch (kind_) {
      case Kind::linear:
        return "linear";
      case Kind::change_point:
        return "changepoint(t*=" + csv::format_double(t_star_) + ")";
      case Kind::spline:
        return "spline(degree=" + std::to_string(basis_->degree()) +
               ", K=" + std::to_string(basis_->size()) + ")";
    }
    return "?";
  }

  // Column labels for reports, in design order.
  std::vector<std::string> coefficient_names() const {
    std::vector<std::string> names;
    names.emplace_back("a");
    switch (kind_) {
      case Kind::linear:
        names.emplace_back("a_t");
        break;
      case Kind::change_point:
        names.emplace_back("a_t");
        names.emplace_back("a_hinge");
        break;
      case Kind::spline:
        for (std::size_t k = 1; k <= basis_->size(); ++k) {
          names.emplace_back("a_phi" + std::to_string(k));
        }
        break;
    }
    for (std::size_t k = 1; k < covariate_dim_; ++k) {
      names.emplace_back("z" + std::to_string(k));
    }
    return names;
  }

 private:
  static void check_dim(std::size_t covariate_dim) {
    if (covariate_dim < 1) throw ConfigError("covariate dimension must be at least 1");
  }

  Kind kind_ = Kind::linear;
  std::size_t covariate_dim_ = 1;
  double t_star_ = 0.0;
  std::shared_ptr<const SplineBasis> basis_;
};

inline Eigen::VectorXd build_design(const DesignSpec& spec, const Subject& subject, double t) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(spec.dim()));
  spec.build(subject, t, std::span<double>(out.data(), spec.dim()));
  return out;
}

}  // namespace sjm
