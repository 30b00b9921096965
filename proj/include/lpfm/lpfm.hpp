#pragma once

#include "lpfm/attention.hpp"
#include "lpfm/autodiff.hpp"
#include "lpfm/checkpoint.hpp"
#include "lpfm/config.hpp"
#include "lpfm/dataset.hpp"
#include "lpfm/diffusion.hpp"
#include "lpfm/errors.hpp"
#include "lpfm/experiment.hpp"
#include "lpfm/geometry.hpp"
#include "lpfm/gradcheck.hpp"
#include "lpfm/matrix.hpp"
#include "lpfm/model.hpp"
#include "lpfm/numeric_core.hpp"
#include "lpfm/optim.hpp"
#include "lpfm/report.hpp"
#include "lpfm/rng.hpp"
#include "lpfm/train.hpp"
