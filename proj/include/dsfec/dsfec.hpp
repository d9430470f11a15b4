#pragma once

#include "dsfec/analyzer.hpp"
#include "dsfec/backbone.hpp"
#include "dsfec/config.hpp"
#include "dsfec/detector.hpp"
#include "dsfec/error.hpp"
#include "dsfec/graph.hpp"
#include "dsfec/heads.hpp"
#include "dsfec/metrics.hpp"
#include "dsfec/ops.hpp"
#include "dsfec/pillar.hpp"
#include "dsfec/postprocess.hpp"
#include "dsfec/rng.hpp"
#include "dsfec/synth.hpp"
#include "dsfec/tensor.hpp"
#include "dsfec/weights.hpp"
