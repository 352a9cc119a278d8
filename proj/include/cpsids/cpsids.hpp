#pragma once

#include "config.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "forest.hpp"
#include "pipeline.hpp"
#include "plant.hpp"
#include "protocol.hpp"
#include "rng.hpp"
#include "wire.hpp"
