#include "slr/schema.hpp"

#include <set>

namespace slr {

using nlohmann::json;

namespace {

bool has_type(const json &value, const std::string &type) {
    if (type == "object")
        return value.is_object();
    if (type == "array")
        return value.is_array();
    if (type == "string")
        return value.is_string();
    if (type == "integer")
        return value.is_number_integer();
    if (type == "number")
        return value.is_number();
    if (type == "boolean")
        return value.is_boolean();
    if (type == "null")
        return value.is_null();
    return false;
}


std::optional<std::string> check(const json &schema, const json &value, const std::string &path) {
    if (schema.contains("type")) {
        const auto &type = schema["type"];
        bool matched = false;
        if (type.is_string())
            matched = has_type(value, type.get<std::string>());
        else {
            for (const auto &alternative : type)
                matched = matched or has_type(value, alternative.get<std::string>());
        }
        if (not matched)
            return path + ": expected type " + type.dump() + ", got " + value.type_name();
    }

    if (schema.contains("enum")) {
        bool found = false;
        for (const auto &candidate : schema["enum"])
            found = found or candidate == value;
        if (not found)
            return path + ": value " + value.dump() + " not in " + schema["enum"].dump();
    }

    if (value.is_string() and schema.contains("minLength")) {
        if (value.get<std::string>().size() < schema["minLength"].get<std::size_t>())
            return path + ": string shorter than " + schema["minLength"].dump();
    }

    if (value.is_object()) {
        if (schema.contains("required")) {
            for (const auto &field : schema["required"]) {
                if (not value.contains(field.get<std::string>()))
                    return path + ": missing required property \"" + field.get<std::string>() + "\"";
            }
        }
        const bool closed = schema.contains("additionalProperties") and schema["additionalProperties"] == false;
        for (const auto &[key, item] : value.items()) {
            if (schema.contains("properties") and schema["properties"].contains(key)) {
                if (auto error = check(schema["properties"][key], item, path + "." + key))
                    return error;
            } else if (closed)
                return path + ": unexpected property \"" + key + "\"";
        }
    }

    if (value.is_array()) {
        if (schema.contains("minItems") and value.size() < schema["minItems"].get<std::size_t>())
            return path + ": fewer than " + schema["minItems"].dump() + " items";
        if (schema.contains("maxItems") and value.size() > schema["maxItems"].get<std::size_t>())
            return path + ": more than " + schema["maxItems"].dump() + " items";
        if (schema.contains("items")) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                if (auto error = check(schema["items"], value[i], path + "[" + std::to_string(i) + "]"))
                    return error;
            }
        }
        if (schema.contains("uniqueItemsBy")) {
            const auto key = schema["uniqueItemsBy"].get<std::string>();
            std::set<std::string> seen;
            for (const auto &item : value) {
                if (not item.is_object() or not item.contains(key))
                    continue;
                if (not seen.insert(item[key].dump()).second)
                    return path + ": duplicate " + key + " " + item[key].dump();
            }
        }
    }

    return std::nullopt;
}

} // unnamed namespace


std::optional<std::string> validate_schema(const json &schema, const json &value) {
    return check(schema, value, "$");
}

} // namespace slr
