// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Strict JSON → struct reading: absent keys keep their defaults, present keys
// must parse, and keys nobody asked for are rejected.

#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "latflow/core/error.hpp"

namespace latflow {

class JsonFields {
   public:
    JsonFields(const nlohmann::json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j_.is_object()) throw ConfigError(section_ + ": expected a JSON object");
    }

    template <typename V>
    JsonFields& get(const char* key, V& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return *this;
        try {
            out = j_.at(key).get<V>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(section_ + "." + key + ": " + e.what());
        }
        return *this;
    }

    const nlohmann::json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError("unknown key '" + section_ + "." + k + "'");
        }
    }

   private:
    const nlohmann::json& j_;
    std::string section_;
    std::set<std::string> seen_;
};

}  // namespace latflow
