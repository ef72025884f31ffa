#pragma once

#include "config.hpp"
#include "error.hpp"
#include "estimator.hpp"
#include "inference.hpp"
#include "logit.hpp"
#include "model.hpp"
#include "sieve.hpp"
#include "simulate.hpp"
