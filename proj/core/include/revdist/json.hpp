#pragma once

#include <nlohmann/json.hpp>

namespace revdist {

// Insertion-ordered so that serialized field order is fixed.
using Json = nlohmann::ordered_json;

}  // namespace revdist
