#pragma once

#include "spiketest/errors.hpp"
#include "spiketest/spectral_measure.hpp"
#include "spiketest/asymptotics.hpp"
#include "spiketest/normal_quantile.hpp"
#include "spiketest/factor_inference.hpp"
#include "spiketest/rng.hpp"
#include "spiketest/simulation.hpp"
#include "spiketest/montecarlo.hpp"
#include "spiketest/json_io.hpp"
