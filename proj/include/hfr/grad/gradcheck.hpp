#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hfr/grad/graph.hpp"
#include "hfr/grad/tensor.hpp"

namespace hfr::grad {

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

struct FiniteDiffOptions {
    double step = 1e-4;
    /// Coordinates probed per tensor; 0 probes every coordinate. When
    /// limited, coordinates are drawn without replacement from `seed`.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
};

struct FiniteDiffResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double worst_autodiff = 0.0;
    double worst_numeric = 0.0;
};

/// Compares the grad() buffers already stored on `params` against central
/// differences (f(p + h) - f(p - h)) / 2h, one coordinate at a time. Each
/// probed coordinate is restored exactly afterwards. A tensor without a grad
/// buffer is treated as having zero gradient.
FiniteDiffResult finite_diff_check(const std::function<double()>& f, std::span<Tensor* const> params,
                                   const FiniteDiffOptions& options = {});

double finite_diff_check(const std::function<double()>& f, std::span<Tensor* const> params, double step);

/// Builds a scalar from graph leaves bound to the given tensors.
using LossBuilder = std::function<Var(Graph&, std::span<const Var>)>;

/// Runs `build` once with autodiff to fill grads of `inputs`, then checks
/// them by finite differences on fresh graphs.
FiniteDiffResult check_gradients(const LossBuilder& build, std::vector<Tensor>& inputs,
                                 const FiniteDiffOptions& options = {});

}  // namespace hfr::grad
