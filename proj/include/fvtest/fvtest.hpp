#pragma once

#include "fvtest/analysis.hpp"
#include "fvtest/boot.hpp"
#include "fvtest/combine.hpp"
#include "fvtest/datamodel.hpp"
#include "fvtest/error.hpp"
#include "fvtest/estimands.hpp"
#include "fvtest/funclasses.hpp"
#include "fvtest/nuisance.hpp"
#include "fvtest/rng.hpp"
#include "fvtest/simlab.hpp"

namespace fvtest {
inline constexpr const char* kVersion = "0.1.0";
}
