// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/tensor.hpp"

#include <optional>
#include <string>

namespace mgpt::cli {

/// Line plot of the first `dims` feature channels over time. A reference
/// clip, when given, is drawn dashed underneath.
std::string render_motion_svg(const Matrix& frames, const std::optional<Matrix>& reference, int dims,
                              const std::string& title);

}  // namespace mgpt::cli
