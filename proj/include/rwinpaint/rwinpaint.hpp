#pragma once

#include "rwinpaint/errors.hpp"
#include "rwinpaint/tensor.hpp"
#include "rwinpaint/mask.hpp"
#include "rwinpaint/autograd.hpp"
#include "rwinpaint/ops.hpp"
#include "rwinpaint/regionwise.hpp"
#include "rwinpaint/archive.hpp"
#include "rwinpaint/features.hpp"
#include "rwinpaint/losses.hpp"
#include "rwinpaint/image_io.hpp"
#include "rwinpaint/data.hpp"
#include "rwinpaint/optim.hpp"
#include "rwinpaint/training.hpp"
#include "rwinpaint/metrics.hpp"
#include "rwinpaint/config.hpp"
#include "rwinpaint/inference.hpp"
#include "rwinpaint/service.hpp"
