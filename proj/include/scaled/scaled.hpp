#pragma once

// Everything in one include.

#include "scaled/checkpoint.hpp"
#include "scaled/codec.hpp"
#include "scaled/commands.hpp"
#include "scaled/config.hpp"
#include "scaled/eval.hpp"
#include "scaled/hash.hpp"
#include "scaled/media_io.hpp"
#include "scaled/model.hpp"
#include "scaled/parallel.hpp"
#include "scaled/rateproxy.hpp"
#include "scaled/resample.hpp"
#include "scaled/surrogate.hpp"
#include "scaled/synthetic.hpp"
#include "scaled/tensor.hpp"
#include "scaled/train.hpp"
#include "scaled/verify.hpp"
