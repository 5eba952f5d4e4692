#pragma once

#include "strongid/dataset.hpp"
#include "strongid/debiased.hpp"
#include "strongid/dgp.hpp"
#include "strongid/discrete_oracle.hpp"
#include "strongid/function_space.hpp"
#include "strongid/harness.hpp"
#include "strongid/linalg.hpp"
#include "strongid/minimax.hpp"
#include "strongid/partially_linear.hpp"
#include "strongid/rng.hpp"
