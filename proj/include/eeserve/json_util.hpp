#pragma once

#include <string>

#include <json.hpp>

#include "eeserve/errors.hpp"

namespace eeserve {

using Json = nlohmann::json;

inline const Json& require_field(const Json& j, const std::string& key, const std::string& ctx) {
    auto it = j.find(key);
    if (it == j.end()) throw ValidationError(ctx + ": missing field '" + key + "'");
    return *it;
}

inline double require_number(const Json& j, const std::string& key, const std::string& ctx) {
    const Json& v = require_field(j, key, ctx);
    if (!v.is_number()) throw ValidationError(ctx + ": field '" + key + "' must be a number");
    return v.get<double>();
}

inline std::int64_t require_int(const Json& j, const std::string& key, const std::string& ctx) {
    const Json& v = require_field(j, key, ctx);
    if (!v.is_number_integer()) throw ValidationError(ctx + ": field '" + key + "' must be an integer");
    return v.get<std::int64_t>();
}

inline std::string require_string(const Json& j, const std::string& key, const std::string& ctx) {
    const Json& v = require_field(j, key, ctx);
    if (!v.is_string()) throw ValidationError(ctx + ": field '" + key + "' must be a string");
    return v.get<std::string>();
}

} // namespace eeserve
