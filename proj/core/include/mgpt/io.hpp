// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mgpt::io {

namespace fs = std::filesystem;

/// Writes to a sibling temp file and renames it into place, so readers see
/// either the old file or the complete new one.
void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

/// Self-describing binary checkpoint:
///   8-byte magic (NUL padded) | u32 format version | u64 header length |
///   JSON header {"meta": ..., "arrays": [{name, rows, cols}]} |
///   float64 little-endian payload, row-major, arrays in header order.
struct Container {
    std::string magic;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Matrix>> arrays;

    void add(std::string name, Matrix m) { arrays.emplace_back(std::move(name), std::move(m)); }
    const Matrix& array(std::string_view name) const;
    bool has(std::string_view name) const;
};

std::string serialize_container(const Container& c);
Container parse_container(std::string_view bytes, std::string_view expected_magic, const std::string& origin);

void save_container(const fs::path& path, const Container& c);
Container load_container(const fs::path& path, std::string_view expected_magic);

/// 64-bit FNV-1a, used for config and artifact digests.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Library version with a git-describe suffix when built from a checkout.
std::string_view version();

}  // namespace mgpt::io
