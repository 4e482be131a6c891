#pragma once

#include "cvflow/baselines.hpp"
#include "cvflow/common.hpp"
#include "cvflow/evaluation.hpp"
#include "cvflow/filters.hpp"
#include "cvflow/flowparams.hpp"
#include "cvflow/predictors.hpp"
#include "cvflow/report.hpp"
#include "cvflow/runner.hpp"
#include "cvflow/svg.hpp"
#include "cvflow/trajectory.hpp"
