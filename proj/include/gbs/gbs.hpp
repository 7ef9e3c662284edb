#pragma once

#include "gbs/baselines.hpp"
#include "gbs/benchmark.hpp"
#include "gbs/core.hpp"
#include "gbs/error.hpp"
#include "gbs/evaluation.hpp"
#include "gbs/identities.hpp"
#include "gbs/neural.hpp"
#include "gbs/policy.hpp"
#include "gbs/random.hpp"
#include "gbs/respondent.hpp"
#include "gbs/single_product.hpp"
