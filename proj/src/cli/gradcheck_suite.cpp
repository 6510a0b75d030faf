#include "hfr/cli/gradcheck_suite.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "hfr/data/syndata.hpp"
#include "hfr/grad/ops.hpp"
#include "hfr/loss/losses.hpp"
#include "hfr/net/backbone.hpp"

namespace hfr::cli {

using grad::Graph;
using grad::Shape;
using grad::Tensor;
using grad::Var;

namespace {

using Inputs = std::vector<Tensor>;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = u(rng);
    return t;
}

/// Values bounded away from zero, for ops with a kink there.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> mag(0.05, 1.0);
    std::bernoulli_distribution sign(0.5);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
    return t;
}

std::mt19937_64 rng_for(std::uint64_t seed, std::uint64_t salt) { return std::mt19937_64(data::mix_seed(seed, salt)); }

/// Contracts an op output with fixed random weights so every output element
/// contributes a distinct gradient.
Var project(Graph& g, Var y, std::uint64_t seed) {
    auto rng = rng_for(seed, 0x50524f4aULL);
    return grad::sum(grad::mul(y, g.constant(random_tensor(y.shape(), rng))));
}

GradcheckCase unary(std::string name, Shape shape, Var (*op)(Var), bool avoid_zero = false) {
    return op_case(
        std::move(name),
        [shape, avoid_zero](std::uint64_t s) {
            auto rng = rng_for(s, 1);
            return Inputs{avoid_zero ? away_from_zero(shape, rng) : random_tensor(shape, rng)};
        },
        [op](Graph& g, std::span<const Var> v, std::uint64_t s) { return project(g, op(v[0]), s); });
}

GradcheckCase binary(std::string name, Shape shape, Var (*op)(Var, Var)) {
    return op_case(
        std::move(name),
        [shape](std::uint64_t s) {
            auto rng = rng_for(s, 2);
            return Inputs{random_tensor(shape, rng), random_tensor(shape, rng)};
        },
        [op](Graph& g, std::span<const Var> v, std::uint64_t s) { return project(g, op(v[0], v[1]), s); });
}

GradcheckCase objective_case() {
    return {"batch_objective", [](std::uint64_t seed) {
                net::BackboneConfig cfg;
                net::Model student = net::build(cfg, seed);
                net::Model teacher = student;
                auto rng = rng_for(seed, 3);
                std::normal_distribution<double> jitter(0.0, 0.05);
                for (auto& p : teacher.params()) {
                    for (auto& v : p.tensor.data()) v += jitter(rng);
                }
                for (auto& p : student.params()) p.trainable = true;

                const data::Dataset ds(4, 2, seed, cfg.input_size);
                const std::vector<int> ids{0, 1, 2, 3};
                const data::PairBatch batch = data::sample_pairs(ds, ids, 4, 0.5, seed);
                const loss::LossWeights weights{0.6, 0.1};

                {
                    Graph g;
                    g.backward(loss::batch_objective(g, student, teacher, batch, weights).loss);
                }
                std::vector<Tensor*> params;
                for (auto& p : student.params()) params.push_back(&p.tensor);
                const auto f = [&] {
                    Graph g;
                    return loss::batch_objective(g, student, teacher, batch, weights).loss.value()[0];
                };
                return grad::finite_diff_check(f, params, {1e-4, 3, seed});
            }};
}

std::vector<GradcheckCase> make_cases() {
    std::vector<GradcheckCase> c;
    c.push_back(op_case(
        "conv2d",
        [](std::uint64_t s) {
            auto rng = rng_for(s, 10);
            return Inputs{random_tensor({2, 3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng),
                          random_tensor({4}, rng)};
        },
        [](Graph& g, std::span<const Var> v, std::uint64_t s) {
            // Alternate between strided/padded and plain geometry.
            const std::size_t stride = 1 + s % 2, pad = s % 2;
            return project(g, grad::conv2d(v[0], v[1], v[2], stride, pad), s);
        }));
    c.push_back(op_case(
        "depthwise_conv2d",
        [](std::uint64_t s) {
            auto rng = rng_for(s, 11);
            return Inputs{random_tensor({2, 3, 5, 5}, rng), random_tensor({3, 1, 3, 3}, rng), random_tensor({3}, rng)};
        },
        [](Graph& g, std::span<const Var> v, std::uint64_t s) {
            return project(g, grad::depthwise_conv2d(v[0], v[1], v[2], 1), s);
        }));
    c.push_back(op_case(
        "linear",
        [](std::uint64_t s) {
            auto rng = rng_for(s, 12);
            return Inputs{random_tensor({2, 3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)};
        },
        [](Graph& g, std::span<const Var> v, std::uint64_t s) { return project(g, grad::linear(v[0], v[1], v[2]), s); }));
    c.push_back(op_case(
        "layer_norm",
        [](std::uint64_t s) {
            auto rng = rng_for(s, 13);
            return Inputs{random_tensor({3, 6}, rng), random_tensor({6}, rng, 0.5, 1.5), random_tensor({6}, rng)};
        },
        [](Graph& g, std::span<const Var> v, std::uint64_t s) {
            return project(g, grad::layer_norm(v[0], v[1], v[2], 1e-6), s);
        }));
    c.push_back(unary("gelu", {3, 4}, grad::gelu));
    c.push_back(op_case(
        "attention",
        [](std::uint64_t s) {
            auto rng = rng_for(s, 14);
            Inputs in{random_tensor({2, 4, 3}, rng)};
            for (int i = 0; i < 4; ++i) in.push_back(random_tensor({3, 3}, rng));
            return in;
        },
        [](Graph& g, std::span<const Var> v, std::uint64_t s) {
            return project(g, grad::attention(v[0], v[1], v[2], v[3], v[4]), s);
        }));
    c.push_back(unary("global_avg_pool", {2, 3, 3, 3}, grad::global_avg_pool));
    c.push_back(unary("to_channels_last", {2, 3, 2, 4}, grad::to_channels_last));
    c.push_back(unary("to_channels_first", {2, 2, 4, 3}, grad::to_channels_first));
    c.push_back(op_case(
        "reshape", [](std::uint64_t s) { auto rng = rng_for(s, 15); return Inputs{random_tensor({2, 6}, rng)}; },
        [](Graph& g, std::span<const Var> v, std::uint64_t s) { return project(g, grad::reshape(v[0], {3, 4}), s); }));
    c.push_back(binary("add", {3, 4}, grad::add));
    c.push_back(binary("sub", {3, 4}, grad::sub));
    c.push_back(binary("mul", {3, 4}, grad::mul));
    c.push_back(op_case(
        "affine", [](std::uint64_t s) { auto rng = rng_for(s, 16); return Inputs{random_tensor({5}, rng)}; },
        [](Graph& g, std::span<const Var> v, std::uint64_t s) { return project(g, grad::affine(v[0], -1.7, 0.3), s); }));
    c.push_back(unary("relu", {4, 4}, grad::relu, true));
    c.push_back(unary("sum", {3, 4}, grad::sum));
    c.push_back(unary("mean", {3, 4}, grad::mean));
    c.push_back(binary("row_cosine", {3, 5}, grad::row_cosine));
    c.push_back(op_case(
        "contrastive_rows",
        [](std::uint64_t s) {
            auto rng = rng_for(s, 17);
            return Inputs{random_tensor({4, 5}, rng), random_tensor({4, 5}, rng)};
        },
        [](Graph& g, std::span<const Var> v, std::uint64_t s) {
            const std::vector<int> y{1, 0, 1, 0};
            return project(g, loss::contrastive_rows(v[0], v[1], y, 0.05), s);
        }));
    c.push_back(binary("self_distillation_rows", {3, 5}, loss::self_distillation_rows));
    c.push_back(op_case(
        "total",
        [](std::uint64_t s) {
            auto rng = rng_for(s, 18);
            return Inputs{random_tensor({1}, rng, 0.0, 2.0), random_tensor({1}, rng, 0.0, 2.0)};
        },
        [](Graph& g, std::span<const Var> v, std::uint64_t s) { return project(g, loss::total(v[0], v[1], 0.75), s); }));
    c.push_back(objective_case());
    return c;
}

}  // namespace

GradcheckCase op_case(std::string name, std::function<std::vector<Tensor>(std::uint64_t)> make_inputs,
                      std::function<Var(Graph&, std::span<const Var>, std::uint64_t)> build) {
    return {std::move(name), [make_inputs = std::move(make_inputs), build = std::move(build)](std::uint64_t seed) {
                std::vector<Tensor> inputs = make_inputs(seed);
                const grad::LossBuilder bound = [&](Graph& g, std::span<const Var> v) { return build(g, v, seed); };
                return grad::check_gradients(bound, inputs);
            }};
}

const std::vector<GradcheckCase>& gradcheck_cases() {
    static const std::vector<GradcheckCase> cases = make_cases();
    return cases;
}

int run_gradcheck(std::span<const GradcheckCase> cases, std::ostream& out, std::size_t seeds, double tolerance) {
    bool ok = true;
    char line[256];
    for (const auto& c : cases) {
        double worst = 0.0;
        std::size_t coords = 0;
        std::string failure;
        for (std::size_t s = 0; s < seeds; ++s) {
            try {
                const grad::FiniteDiffResult r = c.run(s);
                coords += r.coords_checked;
                // A NaN error sticks so the case cannot pass.
                if (!std::isnan(worst) && !(r.max_rel_error <= worst)) worst = r.max_rel_error;
            } catch (const std::exception& e) {
                failure = e.what();
                break;
            }
        }
        const bool pass = failure.empty() && worst <= tolerance;
        ok = ok && pass;
        std::snprintf(line, sizeof line, "%-24s max_rel_error=%.3e seeds=%zu coords=%zu %s", c.name.c_str(), worst,
                      seeds, coords, pass ? "PASS" : "FAIL");
        out << line;
        if (!failure.empty()) out << " (" << failure << ")";
        out << '\n';
    }
    return ok ? 0 : 3;
}

}  // namespace hfr::cli
