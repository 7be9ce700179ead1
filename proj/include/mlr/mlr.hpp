#pragma once

// Umbrella header: thresholding reduction from mixtures of linear regressions
// to clustering, with lemma verification and an EM baseline.

#include "mlr/errors.hpp"
#include "mlr/rng.hpp"
#include "mlr/stats.hpp"
#include "mlr/parallel.hpp"
#include "mlr/model.hpp"
#include "mlr/threshold.hpp"
#include "mlr/cluster.hpp"
#include "mlr/assignment.hpp"
#include "mlr/recover.hpp"
#include "mlr/verify.hpp"
#include "mlr/baseline.hpp"
#include "mlr/experiment.hpp"
