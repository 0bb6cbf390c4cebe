// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header for the condlstmq library.

#pragma once

#include "condlstmq/adam.hpp"
#include "condlstmq/autodiff.hpp"
#include "condlstmq/csv.hpp"
#include "condlstmq/dates.hpp"
#include "condlstmq/errors.hpp"
#include "condlstmq/eval.hpp"
#include "condlstmq/fan_chart.hpp"
#include "condlstmq/interpolate.hpp"
#include "condlstmq/loaders.hpp"
#include "condlstmq/model.hpp"
#include "condlstmq/panel.hpp"
#include "condlstmq/quantile_loss.hpp"
#include "condlstmq/run_config.hpp"
#include "condlstmq/seasonality.hpp"
#include "condlstmq/stats_tests.hpp"
#include "condlstmq/synth.hpp"
#include "condlstmq/train.hpp"
