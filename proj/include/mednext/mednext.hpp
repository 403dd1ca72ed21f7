// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mednext/activation.hpp"
#include "mednext/analysis.hpp"
#include "mednext/binary_io.hpp"
#include "mednext/blocks.hpp"
#include "mednext/checkpoint.hpp"
#include "mednext/config.hpp"
#include "mednext/conv.hpp"
#include "mednext/errors.hpp"
#include "mednext/loss.hpp"
#include "mednext/metrics.hpp"
#include "mednext/model.hpp"
#include "mednext/norm.hpp"
#include "mednext/optim.hpp"
#include "mednext/resize.hpp"
#include "mednext/synthetic.hpp"
#include "mednext/tensor.hpp"
#include "mednext/train.hpp"
#include "mednext/upkern.hpp"
#include "mednext/volume_io.hpp"
