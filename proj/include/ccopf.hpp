#pragma once

#include "ccopf/errors.hpp"
#include "ccopf/grid.hpp"
#include "ccopf/forecast.hpp"
#include "ccopf/policy.hpp"
#include "ccopf/moments.hpp"
#include "ccopf/conic_program.hpp"
#include "ccopf/socp_builder.hpp"
#include "ccopf/solver.hpp"
#include "ccopf/interior_point.hpp"
#include "ccopf/random.hpp"
#include "ccopf/validation.hpp"
#include "ccopf/pipeline.hpp"
