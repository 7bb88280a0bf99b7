#pragma once

// Umbrella header: the whole library.

#include "rb/aggregation.hpp"
#include "rb/config.hpp"
#include "rb/errors.hpp"
#include "rb/grading.hpp"
#include "rb/imaging.hpp"
#include "rb/lpdmf.hpp"
#include "rb/metrics.hpp"
#include "rb/micronet.hpp"
#include "rb/patcher.hpp"
#include "rb/phantom.hpp"
#include "rb/pipeline.hpp"
