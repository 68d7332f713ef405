#pragma once

#include "rhip/compress.hpp"
#include "rhip/config.hpp"
#include "rhip/error.hpp"
#include "rhip/eval.hpp"
#include "rhip/graph.hpp"
#include "rhip/gridworld.hpp"
#include "rhip/io.hpp"
#include "rhip/irl.hpp"
#include "rhip/planners.hpp"
#include "rhip/random.hpp"
#include "rhip/reward_model.hpp"
#include "rhip/spectral.hpp"
#include "rhip/training.hpp"
#include "rhip/sweep.hpp"
