#pragma once

#include "checkpoint.hpp"
#include "config.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "kgdata.hpp"
#include "matrix.hpp"
#include "models.hpp"
#include "nodepiece.hpp"
#include "pipeline.hpp"
#include "random.hpp"
#include "training.hpp"
