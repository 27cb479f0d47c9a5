#pragma once

// Umbrella header: pulls in the whole library in dependency order.

#include "spdelab/rng.hpp"
#include "spdelab/spectral.hpp"
#include "spdelab/noise.hpp"
#include "spdelab/coefficients.hpp"
#include "spdelab/collocation.hpp"
#include "spdelab/parallel.hpp"
#include "spdelab/solver.hpp"
#include "spdelab/malliavin.hpp"
#include "spdelab/density.hpp"
#include "spdelab/config.hpp"
#include "spdelab/io.hpp"
#include "spdelab/experiments.hpp"
