#pragma once

// SPDX-License-Identifier: Apache-2.0

#include "los/core.hpp"
#include "los/error.hpp"
#include "los/eval.hpp"
#include "los/format.hpp"
#include "los/gsf.hpp"
#include "los/losnet/checkpoint.hpp"
#include "los/losnet/config.hpp"
#include "los/losnet/model.hpp"
#include "los/losnet/optim.hpp"
#include "los/losnet/params.hpp"
#include "los/losnet/train.hpp"
#include "los/py_random.hpp"
#include "los/synth.hpp"
