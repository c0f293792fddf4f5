#pragma once

#include "acd/agglomeration.hpp"
#include "acd/analysis.hpp"
#include "acd/architectures.hpp"
#include "acd/backprop.hpp"
#include "acd/cd.hpp"
#include "acd/error.hpp"
#include "acd/hierarchy.hpp"
#include "acd/io.hpp"
#include "acd/model.hpp"
#include "acd/ops.hpp"
#include "acd/parallel.hpp"
#include "acd/random.hpp"
#include "acd/render.hpp"
#include "acd/scorers.hpp"
#include "acd/tensor.hpp"
#include "acd/train.hpp"
#include "acd/units.hpp"
