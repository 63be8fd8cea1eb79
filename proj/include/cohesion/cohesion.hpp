#pragma once

#include "cohesion/dataset.hpp"
#include "cohesion/error.hpp"
#include "cohesion/experiment.hpp"
#include "cohesion/feature_store.hpp"
#include "cohesion/fusion.hpp"
#include "cohesion/kernel.hpp"
#include "cohesion/metrics.hpp"
#include "cohesion/svr.hpp"
#include "cohesion/synth.hpp"
