#pragma once

#include "gexpect/operator_core.hpp"
#include "gexpect/covariance_set.hpp"
#include "gexpect/estimate.hpp"
#include "gexpect/g_normal.hpp"
#include "gexpect/control_sim.hpp"
#include "gexpect/stoch_integral.hpp"
#include "gexpect/g_pde.hpp"
#include "gexpect/experiment.hpp"
