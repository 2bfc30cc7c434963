#pragma once

#include "mpb/error.hpp"
#include "mpb/tensor.hpp"
#include "mpb/quadrature.hpp"
#include "mpb/basis.hpp"
#include "mpb/reduction.hpp"
#include "mpb/solver.hpp"
#include "mpb/model.hpp"
#include "mpb/fpca.hpp"
#include "mpb/selection.hpp"
#include "mpb/sim.hpp"
#include "mpb/io.hpp"
#include "mpb/config.hpp"
