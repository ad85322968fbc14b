#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "sjm/perturb.hpp"
#include "sjm/sim.hpp"

namespace {

sjm::TrialData small_study_data(std::uint64_t seed = 23, int n = 120) {
  sjm::ScenarioConfig config;
  config.setting = sjm::Setting::s1;
  config.n = n;
  config.seed = seed;
  return sjm::gen_setting(config);
}

}  // namespace

TEST_CASE("degenerate unit weights reproduce the point estimate exactly") {
  const auto data = small_study_data();
  const auto spec = sjm::DesignSpec::linear(data.covariate_dim());
  const auto fit = sjm::fit_sjm(data, spec);

  sjm::PerturbConfig config;
  config.replicates = 5;
  config.seed = 3;
  config.law = sjm::PerturbConfig::WeightLaw::unit;
  const auto result = sjm::perturb_fit(data, spec, fit, config);

  REQUIRE(result.beta_star.rows() == 5);
  for (Eigen::Index b = 0; b < result.beta_star.rows(); ++b) {
    for (Eigen::Index k = 0; k < fit.beta_hat.size(); ++k) {
      CHECK(result.beta_star(b, k) == fit.beta_hat[k]);  // bitwise
    }
    CHECK(result.eta_star(b, 0) == fit.cox.eta_hat[0]);
  }
  CHECK(result.se_beta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(result.failures == 0);
}

TEST_CASE("needs at least two replicates") {
  const auto data = small_study_data();
  const auto spec = sjm::DesignSpec::linear(data.covariate_dim());
  const auto fit = sjm::fit_sjm(data, spec);
  sjm::PerturbConfig config;
  config.replicates = 1;
  CHECK_THROWS_AS(sjm::perturb_fit(data, spec, fit, config), sjm::ConfigError);
}

TEST_CASE("results are independent of the worker count") {
  const auto data = small_study_data();
  const auto spec = sjm::DesignSpec::linear(data.covariate_dim());
  const auto fit = sjm::fit_sjm(data, spec);

  sjm::PerturbConfig config;
  config.replicates = 24;
  config.seed = 99;

  config.threads = 1;
  const auto serial = sjm::perturb_fit(data, spec, fit, config);
  config.threads = 4;
  const auto parallel = sjm::perturb_fit(data, spec, fit, config);

  CHECK(serial.beta_star == parallel.beta_star);
  CHECK(serial.eta_star == parallel.eta_star);
  CHECK(serial.se_beta == parallel.se_beta);
  CHECK(serial.failures == parallel.failures);
}

TEST_CASE("the spread is invariant under replicate reordering") {
  const auto data = small_study_data();
  const auto spec = sjm::DesignSpec::linear(data.covariate_dim());
  const auto fit = sjm::fit_sjm(data, spec);

  sjm::PerturbConfig config;
  config.replicates = 30;
  config.seed = 5;
  const auto result = sjm::perturb_fit(data, spec, fit, config);

  Eigen::MatrixXd reversed = result.beta_star.colwise().reverse();
  const Eigen::VectorXd se_again = sjm::detail::column_sd(reversed);
  for (Eigen::Index k = 0; k < se_again.size(); ++k) {
    CHECK(se_again[k] == Catch::Approx(result.se_beta[k]).epsilon(1e-12));
  }
}

TEST_CASE("confidence intervals are centered on the point estimate") {
  const auto data = small_study_data();
  const auto spec = sjm::DesignSpec::linear(data.covariate_dim());
  const auto fit = sjm::fit_sjm(data, spec);

  sjm::PerturbConfig config;
  config.replicates = 40;
  config.seed = 17;
  const auto result = sjm::perturb_fit(data, spec, fit, config);
  for (Eigen::Index k = 0; k < fit.beta_hat.size(); ++k) {
    CHECK(result.ci_beta(k, 0) == Catch::Approx(fit.beta_hat[k] - 1.96 * result.se_beta[k])
                                      .margin(1e-3 * (1.0 + std::abs(fit.beta_hat[k]))));
    CHECK(result.ci_beta(k, 1) > result.ci_beta(k, 0));
  }
  CHECK(result.se_beta.minCoeff() > 0.0);
}

TEST_CASE("curve bands: unit weights give zero width") {
  sjm::ScenarioConfig config;
  config.setting = sjm::Setting::s3;
  config.n = 150;
  config.seed = 8;
  const auto data = sjm::gen_setting(config);
  const auto basis = sjm::make_basis(data, 2, 2);
  const auto spec = sjm::DesignSpec::spline(data.covariate_dim(), basis);

  sjm::PerturbConfig pc;
  pc.replicates = 4;
  pc.seed = 2;
  pc.law = sjm::PerturbConfig::WeightLaw::unit;
  const std::vector<double> grid{1.0, 2.0, 4.0, 8.0};
  const auto curve = sjm::curve_bands(data, spec, basis, grid, pc);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(curve.pointwise_se[k] == 0.0);
    CHECK(curve.lo95[k] == curve.delta_yslope[k]);
    CHECK(curve.hi95[k] == curve.delta_yslope[k]);
  }
}

TEST_CASE("curve bands vary smoothly over the grid") {
  sjm::ScenarioConfig config;
  config.setting = sjm::Setting::s3;
  config.n = 150;
  config.seed = 21;
  const auto data = sjm::gen_setting(config);
  const auto basis = sjm::make_basis(data, 2, 2);
  const auto spec = sjm::DesignSpec::spline(data.covariate_dim(), basis);

  sjm::PerturbConfig pc;
  pc.replicates = 60;
  pc.seed = 4;
  std::vector<double> grid;
  for (double t = 1.0; t <= 8.0; t += 0.5) grid.push_back(t);
  const auto curve = sjm::curve_bands(data, spec, basis, grid, pc);

  const double max_se = *std::max_element(curve.pointwise_se.begin(), curve.pointwise_se.end());
  REQUIRE(max_se > 0.0);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double spacing = grid[k] - grid[k - 1];
    CHECK(std::abs(curve.pointwise_se[k] - curve.pointwise_se[k - 1]) <
          5.0 * spacing * max_se);
  }
}
