#pragma once

#include "ssbjam/binary_io.hpp"
#include "ssbjam/channel.hpp"
#include "ssbjam/datagen.hpp"
#include "ssbjam/error.hpp"
#include "ssbjam/fl.hpp"
#include "ssbjam/metrics.hpp"
#include "ssbjam/nn.hpp"
#include "ssbjam/phy.hpp"
#include "ssbjam/rng.hpp"
