#pragma once

// Umbrella header.

#include "heavytail/autodiff.hpp"
#include "heavytail/config.hpp"
#include "heavytail/dataset.hpp"
#include "heavytail/errors.hpp"
#include "heavytail/eval.hpp"
#include "heavytail/losses.hpp"
#include "heavytail/model.hpp"
#include "heavytail/rng.hpp"
#include "heavytail/sampler.hpp"
#include "heavytail/tensor.hpp"
#include "heavytail/trainer.hpp"
