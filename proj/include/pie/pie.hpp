// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pie/csv.hpp"
#include "pie/error.hpp"
#include "pie/estimators.hpp"
#include "pie/inference.hpp"
#include "pie/linalg.hpp"
#include "pie/montecarlo.hpp"
#include "pie/panel.hpp"
#include "pie/random.hpp"
