#pragma once

// Umbrella header for the merging library (everything except the CLI).

#include "mals/error.hpp"
#include "mals/tensor.hpp"
#include "mals/archive.hpp"
#include "mals/grouping.hpp"
#include "mals/task_vector.hpp"
#include "mals/conflict.hpp"
#include "mals/allocator.hpp"
#include "mals/merge.hpp"
#include "mals/report.hpp"
#include "mals/config.hpp"
#include "mals/synth.hpp"
