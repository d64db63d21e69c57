#pragma once

// Umbrella header for the whole library.

#include "cipot/conformal.hpp"
#include "cipot/curves.hpp"
#include "cipot/dataset.hpp"
#include "cipot/mathutil.hpp"
#include "cipot/metrics.hpp"
#include "cipot/models.hpp"
#include "cipot/pipeline.hpp"
#include "cipot/synthetic.hpp"
