// Umbrella header.
#ifndef LABELSHIFT_LABELSHIFT_HPP
#define LABELSHIFT_LABELSHIFT_HPP

#include "labelshift/types.hpp"
#include "labelshift/rng.hpp"
#include "labelshift/data.hpp"
#include "labelshift/predictor.hpp"
#include "labelshift/estimators.hpp"
#include "labelshift/metrics.hpp"
#include "labelshift/federated.hpp"
#include "labelshift/io.hpp"
#include "labelshift/experiments.hpp"

#endif  // LABELSHIFT_LABELSHIFT_HPP
