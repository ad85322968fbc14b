#pragma once

// Semiparametric joint modeling of a longitudinal outcome and a terminal
// event: marginal Cox fit with Breslow baseline, risk-score-matched
// estimating equations with a closed-form solution, perturbation-resampling
// inference, and a seeded Monte-Carlo study engine.

#include "sjm/cox.hpp"
#include "sjm/csv.hpp"
#include "sjm/curve.hpp"
#include "sjm/design.hpp"
#include "sjm/errors.hpp"
#include "sjm/estimator.hpp"
#include "sjm/parallel.hpp"
#include "sjm/perturb.hpp"
#include "sjm/rng.hpp"
#include "sjm/sim.hpp"
#include "sjm/spline.hpp"
#include "sjm/step_function.hpp"
#include "sjm/trial_data.hpp"
