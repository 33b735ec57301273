#pragma once

// Umbrella header: dynamic instrumental-variables estimation for randomized
// trials with time-varying, absorbing treatment exposure.

#include "dyniv/characterization.hpp"
#include "dyniv/common.hpp"
#include "dyniv/csv.hpp"
#include "dyniv/estimators.hpp"
#include "dyniv/panel.hpp"
#include "dyniv/regression.hpp"
#include "dyniv/serialize.hpp"
#include "dyniv/simulation.hpp"
