#pragma once

#include "mmfss/autograd.hpp"
#include "mmfss/checkpoint.hpp"
#include "mmfss/config.hpp"
#include "mmfss/encoder.hpp"
#include "mmfss/errors.hpp"
#include "mmfss/fusion.hpp"
#include "mmfss/harness.hpp"
#include "mmfss/model.hpp"
#include "mmfss/nn.hpp"
#include "mmfss/optim.hpp"
#include "mmfss/prototypes.hpp"
#include "mmfss/spatial.hpp"
#include "mmfss/synthdata.hpp"
#include "mmfss/tacc.hpp"
#include "mmfss/tensor.hpp"
#include "mmfss/textbank.hpp"
