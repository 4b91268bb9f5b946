#pragma once
// Umbrella header.

#include "qfb/mps_core.hpp"
#include "qfb/model.hpp"
#include "qfb/evolve.hpp"
#include "qfb/observables.hpp"
#include "qfb/oracles.hpp"
#include "qfb/config.hpp"
#include "qfb/sweep.hpp"
