#pragma once

#include "embshap/aggregate.hpp"
#include "embshap/data.hpp"
#include "embshap/error.hpp"
#include "embshap/metrics.hpp"
#include "embshap/models.hpp"
#include "embshap/report.hpp"
#include "embshap/shapley.hpp"
#include "embshap/types.hpp"
