#pragma once

#include "dcr/adam.hpp"
#include "dcr/data.hpp"
#include "dcr/dense.hpp"
#include "dcr/errors.hpp"
#include "dcr/grad_check.hpp"
#include "dcr/losses.hpp"
#include "dcr/metrics.hpp"
#include "dcr/model.hpp"
#include "dcr/rng.hpp"
#include "dcr/sinkhorn.hpp"
#include "dcr/targeting.hpp"
#include "dcr/tensor.hpp"
#include "dcr/training.hpp"
#include "dcr/types.hpp"
