#pragma once

#include "daan/autodiff.hpp"
#include "daan/baseline.hpp"
#include "daan/config.hpp"
#include "daan/data.hpp"
#include "daan/errors.hpp"
#include "daan/explain.hpp"
#include "daan/grad_check.hpp"
#include "daan/layers.hpp"
#include "daan/metrics.hpp"
#include "daan/micro_check.hpp"
#include "daan/models.hpp"
#include "daan/optim.hpp"
#include "daan/protocol.hpp"
#include "daan/random.hpp"
#include "daan/serialize.hpp"
#include "daan/synth.hpp"
#include "daan/tensor.hpp"
#include "daan/train.hpp"
