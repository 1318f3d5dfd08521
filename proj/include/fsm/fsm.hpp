#pragma once

// Umbrella header.

#include "fsm/baselines.hpp"
#include "fsm/csv.hpp"
#include "fsm/data.hpp"
#include "fsm/design.hpp"
#include "fsm/diagnostics.hpp"
#include "fsm/engine.hpp"
#include "fsm/inference.hpp"
#include "fsm/io.hpp"
#include "fsm/parallel.hpp"
#include "fsm/rng.hpp"
#include "fsm/sampler.hpp"
#include "fsm/selection.hpp"
#include "fsm/simulate.hpp"
#include "fsm/som.hpp"
#include "fsm/version.hpp"
