#pragma once

// Umbrella header for the tiered GAN training engine.

#include "tiergan/autodiff.hpp"
#include "tiergan/checkpoint.hpp"
#include "tiergan/config.hpp"
#include "tiergan/csv.hpp"
#include "tiergan/error.hpp"
#include "tiergan/gan.hpp"
#include "tiergan/gradcheck.hpp"
#include "tiergan/hash.hpp"
#include "tiergan/image.hpp"
#include "tiergan/loss.hpp"
#include "tiergan/model.hpp"
#include "tiergan/ops.hpp"
#include "tiergan/optim.hpp"
#include "tiergan/parallel.hpp"
#include "tiergan/rng.hpp"
#include "tiergan/tensor.hpp"
#include "tiergan/tiers.hpp"
