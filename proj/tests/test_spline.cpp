#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "oracles.hpp"
#include "sjm/curve.hpp"
#include "sjm/sim.hpp"
#include "sjm/spline.hpp"

TEST_CASE("basis size and the zero anchor at the origin") {
  const sjm::SplineBasis basis(3, {2.0, 5.0}, 10.0);
  CHECK(basis.size() == 5);  // K = interior + degree

  const Eigen::VectorXd at_zero = basis(0.0);
  for (Eigen::Index k = 0; k < at_zero.size(); ++k) CHECK(at_zero[k] == 0.0);

  const Eigen::VectorXd at_right = basis(10.0);  // closed right boundary
  for (Eigen::Index k = 0; k < at_right.size(); ++k) CHECK(std::isfinite(at_right[k]));
  CHECK(at_right[at_right.size() - 1] == 1.0);
}

TEST_CASE("basis values complete the clamped partition of unity") {
  // The dropped first function of a clamped cubic basis with first interior
  // knot q1 is ((q1 - t)/q1)^3 on [0, q1] and 0 beyond, so the kept functions
  // must sum to exactly its complement.
  const double q1 = 2.0;
  const sjm::SplineBasis basis(3, {q1, 5.0}, 10.0);
  for (double t = 0.0; t <= 10.0; t += 0.1251) {
    const double dropped = t < q1 ? std::pow((q1 - t) / q1, 3) : 0.0;
    const Eigen::VectorXd values = basis(t);
    CHECK(values.sum() + dropped == Catch::Approx(1.0).epsilon(1e-12));
    for (Eigen::Index k = 0; k < values.size(); ++k) {
      CHECK(values[k] >= 0.0);
      CHECK(values[k] <= 1.0);
    }
  }
}

TEST_CASE("basis is continuous") {
  const sjm::SplineBasis basis(2, {1.5, 4.0, 7.5}, 10.0);
  Eigen::VectorXd previous = basis(0.0);
  for (double t = 0.005; t <= 10.0; t += 0.005) {
    const Eigen::VectorXd current = basis(t);
    CHECK((current - previous).cwiseAbs().maxCoeff() < 0.02);
    previous = current;
  }
}

TEST_CASE("evaluation outside the boundary is an extrapolation error") {
  const sjm::SplineBasis basis(3, {2.0}, 8.0);
  CHECK_THROWS_AS(basis(-0.001), sjm::DomainError);
  CHECK_THROWS_AS(basis(8.001), sjm::DomainError);
}

TEST_CASE("degree-1 basis with no interior knots spans {t}") {
  const sjm::SplineBasis basis(1, {}, 6.0);
  REQUIRE(basis.size() == 1);
  for (double t : {0.0, 1.0, 3.3, 6.0}) {
    CHECK(basis(t)[0] == Catch::Approx(t / 6.0).margin(1e-14));
  }
}

TEST_CASE("quantile knots need enough distinct visit times") {
  std::vector<sjm::Subject> subjects(2);
  subjects[0] = {"a", Eigen::VectorXd::Constant(1, 1.0), 5.0, true};
  subjects[1] = {"b", Eigen::VectorXd::Constant(1, 0.0), 5.0, true};
  std::vector<std::vector<sjm::Visit>> visits(2);
  visits[0] = {{1.0, 2.0}, {2.0, 2.5}};
  visits[1] = {{1.0, 1.0}};
  const auto data = sjm::TrialData::from_parts(std::move(subjects), std::move(visits));
  CHECK_THROWS_AS(sjm::make_basis(data, 3, 3), sjm::ConfigError);
}

TEST_CASE("quantile knots land inside the boundary on simulated data") {
  sjm::ScenarioConfig config;
  config.setting = sjm::Setting::s3;
  config.n = 150;
  config.seed = 99;
  const auto data = sjm::gen_setting(config);
  const auto basis = sjm::make_basis(data, 3, 3);
  CHECK(basis.size() == 6);
  CHECK(basis.tmax() == data.tau());
  REQUIRE(basis.interior_knots().size() == 3);
  for (double knot : basis.interior_knots()) {
    CHECK(knot > 0.0);
    CHECK(knot < data.tau());
  }
}

TEST_CASE("effect curve fields and the slope identity") {
  sjm::SjmFit fit;
  const sjm::SplineBasis basis(2, {2.0}, 10.0);
  fit.design = sjm::DesignSpec::spline(1, basis);
  fit.beta_hat = Eigen::VectorXd::Zero(4);
  fit.beta_hat[0] = 1.25;  // beta0
  fit.beta_hat[1] = 2.0;
  fit.beta_hat[2] = -1.0;
  fit.beta_hat[3] = 0.5;

  const std::vector<double> grid{0.5, 1.0, 2.0, 5.0, 10.0};
  const auto curve = sjm::effect_curve(fit, basis, grid);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(curve.delta_yslope[k] * grid[k] ==
          Catch::Approx(curve.delta_y[k] - fit.beta_hat[0]).margin(1e-12));
  }

  // a zero spline block means a flat effect equal to beta0
  fit.beta_hat.segment(1, 3).setZero();
  const auto flat = sjm::effect_curve(fit, basis, grid);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(flat.delta_yslope[k] == 0.0);
    CHECK(flat.delta_y[k] == fit.beta_hat[0]);
  }

  // the grid may not contain zero
  const std::vector<double> bad{0.0, 1.0};
  CHECK_THROWS_AS(sjm::effect_curve(fit, basis, bad), sjm::DomainError);
}
