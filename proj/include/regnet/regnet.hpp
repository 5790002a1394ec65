// SPDX-License-Identifier: Apache-2.0
#pragma once

// Umbrella header for the whole library.

#include "regnet/baseline.hpp"
#include "regnet/cli.hpp"
#include "regnet/dataio.hpp"
#include "regnet/decision.hpp"
#include "regnet/encoder.hpp"
#include "regnet/errors.hpp"
#include "regnet/latent_objective.hpp"
#include "regnet/metrics.hpp"
#include "regnet/model_io.hpp"
#include "regnet/run_config.hpp"
#include "regnet/scoring.hpp"
#include "regnet/special.hpp"
#include "regnet/tensor.hpp"
#include "regnet/trainer.hpp"
