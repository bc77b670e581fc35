// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

namespace mgpt {

/// Ordered codebook indices describing one motion.
struct MotionTokenSeq {
    std::vector<int> indices;

    std::size_t size() const { return indices.size(); }
    bool empty() const { return indices.empty(); }
    bool operator==(const MotionTokenSeq&) const = default;
};

}  // namespace mgpt
