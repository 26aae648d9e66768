#pragma once

#include "lanatt/numerics/gradcheck.hpp"
#include "lanatt/numerics/ops.hpp"
#include "lanatt/numerics/tape.hpp"
#include "lanatt/numerics/tensor.hpp"
