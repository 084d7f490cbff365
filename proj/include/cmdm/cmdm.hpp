#pragma once

#include "cmdm/array_io.hpp"
#include "cmdm/checkpoint.hpp"
#include "cmdm/conv_net.hpp"
#include "cmdm/error.hpp"
#include "cmdm/freq_ops.hpp"
#include "cmdm/grid.hpp"
#include "cmdm/hankel.hpp"
#include "cmdm/kspace.hpp"
#include "cmdm/mask.hpp"
#include "cmdm/metrics.hpp"
#include "cmdm/phantom.hpp"
#include "cmdm/random.hpp"
#include "cmdm/recon.hpp"
#include "cmdm/sampler.hpp"
#include "cmdm/score.hpp"
#include "cmdm/studies.hpp"
