#pragma once

#include <nlohmann/json.hpp>

#include "epn/group.hpp"

namespace epn {

/// {"kind", "order", "elements": 9-entry row-major matrices, "mul", "inv"}.
nlohmann::json to_json(const FiniteRotationGroup& group);

/// Rebuilds the group from its elements and checks the stored tables.
FiniteRotationGroup group_from_json(const nlohmann::json& j);

}  // namespace epn
