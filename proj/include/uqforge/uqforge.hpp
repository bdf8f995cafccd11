#pragma once

// Umbrella header: the full uncertainty-quantification toolkit.

#include "uqforge/array.hpp"
#include "uqforge/bayes.hpp"
#include "uqforge/common.hpp"
#include "uqforge/dataset.hpp"
#include "uqforge/eval.hpp"
#include "uqforge/grid.hpp"
#include "uqforge/mlp.hpp"
#include "uqforge/model_io.hpp"
#include "uqforge/rng.hpp"
#include "uqforge/svg.hpp"
#include "uqforge/uncertainty.hpp"
