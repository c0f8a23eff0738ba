#pragma once

#include "slc/error.hpp"
#include "slc/tensor.hpp"
#include "slc/layers.hpp"
#include "slc/oracle.hpp"
#include "slc/model.hpp"
#include "slc/data.hpp"
#include "slc/train.hpp"
#include "slc/gradcheck.hpp"
#include "slc/sweep.hpp"
