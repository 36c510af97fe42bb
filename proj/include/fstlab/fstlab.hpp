#pragma once

#include "fstlab/errors.hpp"
#include "fstlab/tensor.hpp"
#include "fstlab/rng.hpp"
#include "fstlab/layers.hpp"
#include "fstlab/model.hpp"
#include "fstlab/optim.hpp"
#include "fstlab/checkpoint.hpp"
#include "fstlab/dataset.hpp"
#include "fstlab/poison.hpp"
#include "fstlab/metrics.hpp"
#include "fstlab/train.hpp"
#include "fstlab/defense.hpp"
#include "fstlab/config.hpp"
#include "fstlab/harness.hpp"
