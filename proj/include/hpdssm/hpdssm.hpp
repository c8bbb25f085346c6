#pragma once

#include "hpdssm/checkpoint.hpp"
#include "hpdssm/corpus.hpp"
#include "hpdssm/engine.hpp"
#include "hpdssm/error.hpp"
#include "hpdssm/hpd.hpp"
#include "hpdssm/linalg.hpp"
#include "hpdssm/metrics.hpp"
#include "hpdssm/model_config.hpp"
#include "hpdssm/perturb.hpp"
#include "hpdssm/reduce.hpp"
#include "hpdssm/rng.hpp"
#include "hpdssm/ssm.hpp"
#include "hpdssm/svd.hpp"
#include "hpdssm/sweep.hpp"
#include "hpdssm/tensor.hpp"
#include "hpdssm/toy.hpp"
