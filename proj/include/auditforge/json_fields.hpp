#pragma once

// Field accessors that raise FormatError naming the location and field.

#include <optional>
#include <string>
#include <string_view>

#include <fmt/format.h>

#include "auditforge/error.hpp"
#include "auditforge/util.hpp"

namespace auditforge::detail {

[[noreturn]] inline void field_error(const std::string& where, std::string_view field, std::string_view what) {
    throw FormatError(fmt::format("{}: field '{}': {}", where, field, what));
}

inline const Json& require(const Json& j, std::string_view key, const std::string& where) {
    if (!j.is_object()) {
        throw FormatError(fmt::format("{}: expected a JSON object", where));
    }
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        field_error(where, key, "missing");
    }
    return *it;
}

inline std::string require_string(const Json& j, std::string_view key, const std::string& where) {
    const Json& v = require(j, key, where);
    if (!v.is_string()) {
        field_error(where, key, "expected string");
    }
    return v.get<std::string>();
}

inline double require_number(const Json& j, std::string_view key, const std::string& where) {
    const Json& v = require(j, key, where);
    if (!v.is_number()) {
        field_error(where, key, "expected number");
    }
    return v.get<double>();
}

inline long long require_integer(const Json& j, std::string_view key, const std::string& where) {
    const Json& v = require(j, key, where);
    if (!v.is_number_integer()) {
        field_error(where, key, "expected integer");
    }
    return v.get<long long>();
}

inline std::optional<std::string> optional_string(const Json& j, std::string_view key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_string()) {
        field_error(where, key, "expected string");
    }
    return it->get<std::string>();
}

inline std::optional<bool> optional_bool(const Json& j, std::string_view key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_boolean()) {
        field_error(where, key, "expected boolean");
    }
    return it->get<bool>();
}

}  // namespace auditforge::detail
