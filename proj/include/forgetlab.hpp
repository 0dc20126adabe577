#pragma once

#include "forgetlab/errors.hpp"
#include "forgetlab/estimators.hpp"
#include "forgetlab/extensions.hpp"
#include "forgetlab/fault.hpp"
#include "forgetlab/flows.hpp"
#include "forgetlab/mixture.hpp"
#include "forgetlab/near_on_policy.hpp"
#include "forgetlab/objectives.hpp"
#include "forgetlab/replay.hpp"
#include "forgetlab/rng.hpp"

namespace forgetlab {
inline constexpr const char* kVersion = "0.1.0";
}
