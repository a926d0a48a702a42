#pragma once

#include "dosp/rng.hpp"
#include "dosp/schedules.hpp"
#include "dosp/perturbation.hpp"
#include "dosp/objectives.hpp"
#include "dosp/exchange.hpp"
#include "dosp/algorithms.hpp"
#include "dosp/analysis.hpp"
#include "dosp/config.hpp"
#include "dosp/experiment.hpp"
