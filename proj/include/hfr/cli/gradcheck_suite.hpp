#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hfr/grad/gradcheck.hpp"

namespace hfr::cli {

/// One named gradient check; `run` performs it for a single seed.
struct GradcheckCase {
    std::string name;
    std::function<grad::FiniteDiffResult(std::uint64_t seed)> run;
};

/// Wraps an op check: the builder receives leaves bound to the tensors that
/// `make_inputs` returns for the seed.
GradcheckCase op_case(std::string name, std::function<std::vector<grad::Tensor>(std::uint64_t)> make_inputs,
                      std::function<grad::Var(grad::Graph&, std::span<const grad::Var>, std::uint64_t)> build);

/// Every differentiable op plus the full adaptation objective, each once.
const std::vector<GradcheckCase>& gradcheck_cases();

inline constexpr double kGradcheckTolerance = 1e-3;
inline constexpr std::size_t kGradcheckSeeds = 10;

/// Prints one line per case with its worst relative error over all seeds.
/// Returns 0 if every case is within tolerance and 3 otherwise.
int run_gradcheck(std::span<const GradcheckCase> cases, std::ostream& out, std::size_t seeds = kGradcheckSeeds,
                  double tolerance = kGradcheckTolerance);

}  // namespace hfr::cli
