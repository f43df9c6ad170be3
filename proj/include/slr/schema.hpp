#pragma once

#include <optional>
#include <string>

#include "json.hpp"

namespace slr {

/// Validates `value` against a JSON-schema-style descriptor.
///
/// Supported keywords: type (string or list), properties, required,
/// additionalProperties (boolean), items, enum, minItems, maxItems, minLength,
/// and `uniqueItemsBy` (array of objects whose named property must be unique).
///
/// Returns the first violation as "path: message", or nullopt when valid.
std::optional<std::string> validate_schema(const nlohmann::json &schema, const nlohmann::json &value);

} // namespace slr
