// Umbrella header.
#pragma once

#include "mhml/bench.hpp"
#include "mhml/gradcheck.hpp"
#include "mhml/matrix.hpp"
#include "mhml/metrics.hpp"
#include "mhml/multihead.hpp"
#include "mhml/nn.hpp"
#include "mhml/posthoc.hpp"
#include "mhml/rng.hpp"
#include "mhml/suite_io.hpp"
#include "mhml/synthetic.hpp"
