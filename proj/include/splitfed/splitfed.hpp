#pragma once

// Umbrella header for the SplitFed noisy-channel training simulator.

#include "splitfed/adam.hpp"
#include "splitfed/aggregation.hpp"
#include "splitfed/channel.hpp"
#include "splitfed/checkpoint.hpp"
#include "splitfed/config.hpp"
#include "splitfed/data.hpp"
#include "splitfed/metrics.hpp"
#include "splitfed/model.hpp"
#include "splitfed/ops.hpp"
#include "splitfed/protocol.hpp"
#include "splitfed/report.hpp"
#include "splitfed/rng.hpp"
#include "splitfed/tensor.hpp"
#include "splitfed/weights.hpp"
