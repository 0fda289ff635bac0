#pragma once

#include "bridgegen/autodiff.hpp"
#include "bridgegen/bridge.hpp"
#include "bridgegen/codec.hpp"
#include "bridgegen/common.hpp"
#include "bridgegen/conditioning.hpp"
#include "bridgegen/data.hpp"
#include "bridgegen/denoiser.hpp"
#include "bridgegen/eval.hpp"
#include "bridgegen/image.hpp"
#include "bridgegen/optim.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/schedule.hpp"
#include "bridgegen/selfcheck.hpp"
#include "bridgegen/tensor.hpp"
#include "bridgegen/training.hpp"
