// SPDX-License-Identifier: Apache-2.0

#include "config_file.hpp"

#include "mgpt/error.hpp"
#include "mgpt/io.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdlib>

namespace mgpt::cli {

namespace {

nlohmann::json scalar(const YAML::Node& n) {
    const std::string& s = n.Scalar();
    if (n.Tag() == "!") return s;  // quoted
    if (s == "true" || s == "True") return true;
    if (s == "false" || s == "False") return false;
    if (s == "null" || s == "~" || s.empty()) return nullptr;
    char* end = nullptr;
    const long long i = std::strtoll(s.c_str(), &end, 10);
    if (end && *end == '\0' && end != s.c_str()) return i;
    const double d = std::strtod(s.c_str(), &end);
    if (end && *end == '\0' && end != s.c_str()) return d;
    return s;
}

nlohmann::json convert(const YAML::Node& n) {
    switch (n.Type()) {
        case YAML::NodeType::Map: {
            nlohmann::json j = nlohmann::json::object();
            for (const auto& kv : n) j[kv.first.as<std::string>()] = convert(kv.second);
            return j;
        }
        case YAML::NodeType::Sequence: {
            nlohmann::json j = nlohmann::json::array();
            for (const auto& v : n) j.push_back(convert(v));
            return j;
        }
        case YAML::NodeType::Scalar: return scalar(n);
        default: return nullptr;
    }
}

void deep_merge(nlohmann::json& into, const nlohmann::json& from) {
    for (auto it = from.begin(); it != from.end(); ++it) {
        if (it.value().is_object() && into.contains(it.key()) && into[it.key()].is_object()) {
            deep_merge(into[it.key()], it.value());
        } else {
            into[it.key()] = it.value();
        }
    }
}

}  // namespace

nlohmann::json yaml_to_json(const std::string& text, const std::string& origin) {
    try {
        const YAML::Node root = YAML::Load(text);
        if (root.IsNull()) return nlohmann::json::object();
        return convert(root);
    } catch (const YAML::Exception& e) {
        throw ConfigError(origin + ": " + e.what());
    }
}

nlohmann::json parse_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    nlohmann::json value = yaml_to_json(assignment.substr(eq + 1), "--set " + path);
    std::size_t end = path.size();
    while (true) {
        const auto dot = path.rfind('.', end - 1);
        const std::string key = path.substr(dot == std::string::npos ? 0 : dot + 1,
                                            end - (dot == std::string::npos ? 0 : dot + 1));
        if (key.empty()) throw ConfigError("--set: empty key in '" + path + "'");
        value = nlohmann::json{{key, value}};
        if (dot == std::string::npos) break;
        end = dot;
    }
    return value;
}

pipeline::RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& sets) {
    nlohmann::json overrides = nlohmann::json::object();
    if (!file.empty()) {
        if (!std::filesystem::exists(file)) throw IoError("config file not found: " + file.string());
        overrides = yaml_to_json(io::read_file(file), file.string());
        if (!overrides.is_object()) throw ConfigError(file.string() + ": top level must be a mapping");
    }
    for (const auto& s : sets) deep_merge(overrides, parse_assignment(s));
    return pipeline::run_config_from_json(overrides);
}

}  // namespace mgpt::cli
