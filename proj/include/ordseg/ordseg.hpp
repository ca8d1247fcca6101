#pragma once

#include "ordseg/error.hpp"
#include "ordseg/core.hpp"
#include "ordseg/autodiff.hpp"
#include "ordseg/distance.hpp"
#include "ordseg/losses_pointwise.hpp"
#include "ordseg/losses_spatial.hpp"
#include "ordseg/metrics.hpp"
#include "ordseg/stats.hpp"
#include "ordseg/synth.hpp"
#include "ordseg/model.hpp"
#include "ordseg/objective.hpp"
#include "ordseg/gradcheck.hpp"
#include "ordseg/trainer.hpp"
#include "ordseg/io.hpp"
