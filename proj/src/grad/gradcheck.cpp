#include "hfr/grad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hfr::grad {

double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / denom;
}

FiniteDiffResult finite_diff_check(const std::function<double()>& f, std::span<Tensor* const> params,
                                   const FiniteDiffOptions& options) {
    FiniteDiffResult result;
    std::mt19937_64 rng(options.seed);
    const double h = options.step;

    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& p = *params[t];
        std::vector<std::size_t> coords(p.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_tensor != 0 && coords.size() > options.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords_per_tensor);
            std::sort(coords.begin(), coords.end());
        }
        for (std::size_t i : coords) {
            const double original = p[i];
            p[i] = original + h;
            const double up = f();
            p[i] = original - h;
            const double down = f();
            p[i] = original;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
            const double err = relative_error(analytic, numeric);
            ++result.coords_checked;
            if (result.coords_checked == 1 || err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_tensor = t;
                result.worst_index = i;
                result.worst_autodiff = analytic;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

double finite_diff_check(const std::function<double()>& f, std::span<Tensor* const> params, double step) {
    FiniteDiffOptions options;
    options.step = step;
    return finite_diff_check(f, params, options).max_rel_error;
}

FiniteDiffResult check_gradients(const LossBuilder& build, std::vector<Tensor>& inputs,
                                 const FiniteDiffOptions& options) {
    std::vector<Tensor*> ptrs;
    for (auto& t : inputs) {
        t.ensure_grad();
        t.zero_grad();
        ptrs.push_back(&t);
    }
    {
        Graph g;
        std::vector<Var> leaves;
        for (auto& t : inputs) leaves.push_back(g.parameter(t));
        g.backward(build(g, leaves));
    }
    auto eval = [&]() {
        Graph g;
        std::vector<Var> leaves;
        for (auto& t : inputs) leaves.push_back(g.constant(Tensor(t.shape(), t.values())));
        return build(g, leaves).value()[0];
    };
    return finite_diff_check(eval, ptrs, options);
}

}  // namespace hfr::grad
