#pragma once

#include <cstddef>
#include <vector>

#include "hfr/grad/tensor.hpp"

namespace hfr::data {

/// Aligned (source, target, label) triplets. Targets are already
/// three-channel; label 1 means both images show the same identity.
struct PairBatch {
    grad::Tensor x_source;
    grad::Tensor x_target;
    std::vector<int> y;

    std::size_t size() const noexcept { return y.size(); }
};

}  // namespace hfr::data
