// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mgpt::cli {

/// YAML document to JSON. Quoted scalars stay strings; plain scalars become
/// bool, integer or float when they parse as one.
nlohmann::json yaml_to_json(const std::string& text, const std::string& origin);

/// "lm.schedule.steps=200" into a nested override object.
nlohmann::json parse_assignment(const std::string& assignment);

/// Defaults, then the config file (if any), then each `--set` in order.
pipeline::RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& sets);

}  // namespace mgpt::cli
