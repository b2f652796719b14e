#pragma once
// Umbrella header.

#include "nirsfs/error.hpp"
#include "nirsfs/tensor.hpp"
#include "nirsfs/ops.hpp"
#include "nirsfs/adam.hpp"
#include "nirsfs/photometry.hpp"
#include "nirsfs/image_io.hpp"
#include "nirsfs/synth.hpp"
#include "nirsfs/losses.hpp"
#include "nirsfs/nets.hpp"
#include "nirsfs/checkpoint.hpp"
#include "nirsfs/trainer.hpp"
#include "nirsfs/evaluator.hpp"
#include "nirsfs/geometry.hpp"
#include "nirsfs/plot.hpp"
#include "nirsfs/runtime.hpp"
