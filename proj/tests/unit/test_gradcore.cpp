#include <doctest.h>

#include <cmath>
#include <random>

#include "hfr/grad/gradcheck.hpp"
#include "hfr/grad/graph.hpp"
#include "hfr/grad/ops.hpp"
#include "hfr/grad/tensor.hpp"

using namespace hfr::grad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = u(rng);
    return t;
}

// Direct nested-loop convolution with explicit zero padding.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor y(Shape{n, o, oh, ow});
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t oi = 0; oi < o; ++oi)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = b[oi];
                    for (std::size_t ci = 0; ci < c; ++ci)
                        for (std::size_t a = 0; a < kh; ++a)
                            for (std::size_t e = 0; e < kw; ++e) {
                                const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                                const long q = static_cast<long>(j * stride + e) - static_cast<long>(pad);
                                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd)) continue;
                                acc += x[((ni * c + ci) * h + r) * wd + q] * w[((oi * c + ci) * kh + a) * kw + e];
                            }
                    y[((ni * o + oi) * oh + i) * ow + j] = acc;
                }
    return y;
}

Tensor naive_depthwise(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t kh = w.dim(2), kw = w.dim(3);
    const std::size_t oh = h + 2 * pad - kh + 1, ow = wd + 2 * pad - kw + 1;
    Tensor y(Shape{n, c, oh, ow});
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = b[ci];
                    for (std::size_t a = 0; a < kh; ++a)
                        for (std::size_t e = 0; e < kw; ++e) {
                            const long r = static_cast<long>(i + a) - static_cast<long>(pad);
                            const long q = static_cast<long>(j + e) - static_cast<long>(pad);
                            if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd)) continue;
                            acc += x[((ni * c + ci) * h + r) * wd + q] * w[(ci * kh + a) * kw + e];
                        }
                    y[((ni * c + ci) * oh + i) * ow + j] = acc;
                }
    return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("tensor shape invariants") {
    Tensor t(Shape{2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK_FALSE(t.has_grad());
    t.ensure_grad();
    CHECK(t.grad().size() == t.numel());
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(t.reshape(Shape{4}), DimensionError);
}

TEST_CASE("conv2d examples") {
    Graph g;
    const Var ones = g.constant(Tensor(Shape{1, 1, 3, 3}, 1.0));
    const Var y = conv2d(ones, g.constant(Tensor(Shape{1, 1, 3, 3}, 1.0)), g.constant(Tensor(Shape{1}, 0.0)), 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.value()[0] == 9.0);

    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({1, 2, 4, 4}, rng);
    const Var id = conv2d(g.constant(x), g.constant(Tensor(Shape{2, 2, 1, 1}, std::vector<double>{1, 0, 0, 1})),
                          g.constant(Tensor(Shape{2}, 0.0)), 1, 0);
    CHECK(id.value().values() == x.values());
}

TEST_CASE("conv2d matches nested-loop oracle") {
    std::mt19937_64 rng(2);
    for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 1}, {1, 0}, {4, 0}, {2, 0}}) {
        const Tensor x = random_tensor({2, 2, 8, 8}, rng);
        const Tensor w = random_tensor({3, 2, 3, 3}, rng);
        const Tensor b = random_tensor({3}, rng);
        Graph g;
        const Var y = conv2d(g.constant(x), g.constant(w), g.constant(b), stride, pad);
        CHECK(max_abs_diff(y.value(), naive_conv(x, w, b, stride, pad)) <= 1e-12);
    }
    const Tensor x = random_tensor({1, 2, 4, 4}, rng);
    const Tensor w = random_tensor({3, 2, 3, 3}, rng);
    const Tensor b = random_tensor({3}, rng);
    Graph g;
    CHECK(max_abs_diff(conv2d(g.constant(x), g.constant(w), g.constant(b), 1, 1).value(), naive_conv(x, w, b, 1, 1)) <=
          1e-12);
}

TEST_CASE("conv2d rejects mismatched shapes") {
    Graph g;
    const Var x = g.constant(Tensor(Shape{1, 2, 4, 4}));
    CHECK_THROWS_AS(conv2d(x, g.constant(Tensor(Shape{3, 3, 3, 3})), g.constant(Tensor(Shape{3})), 1, 1),
                    DimensionError);
    CHECK_THROWS_AS(conv2d(x, g.constant(Tensor(Shape{3, 2, 3, 3})), g.constant(Tensor(Shape{2})), 1, 1),
                    DimensionError);
    CHECK_THROWS_AS(conv2d(x, g.constant(Tensor(Shape{3, 2, 5, 5})), g.constant(Tensor(Shape{3})), 1, 0),
                    DimensionError);
}

TEST_CASE("depthwise_conv2d examples and oracle") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor({2, 3, 5, 5}, rng);
    Tensor delta(Shape{3, 1, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) delta[c * 9 + 4] = 1.0;
    Graph g;
    CHECK(depthwise_conv2d(g.constant(x), g.constant(delta), g.constant(Tensor(Shape{3})), 1).value().values() ==
          x.values());

    const Var nine = depthwise_conv2d(g.constant(Tensor(Shape{1, 1, 3, 3}, 1.0)),
                                      g.constant(Tensor(Shape{1, 1, 3, 3}, 1.0)), g.constant(Tensor(Shape{1})), 0);
    CHECK(nine.value()[0] == 9.0);

    for (std::size_t pad : {0, 1, 2}) {
        const Tensor w = random_tensor({3, 1, 3, 3}, rng);
        const Tensor b = random_tensor({3}, rng);
        const Var y = depthwise_conv2d(g.constant(x), g.constant(w), g.constant(b), pad);
        CHECK(max_abs_diff(y.value(), naive_depthwise(x, w, b, pad)) <= 1e-12);
    }
}

TEST_CASE("linear examples and oracle") {
    Graph g;
    const Var y = linear(g.constant(Tensor(Shape{1, 2}, std::vector<double>{1, 2})),
                         g.constant(Tensor(Shape{2, 2}, std::vector<double>{1, 1, 0, 1})),
                         g.constant(Tensor(Shape{2}, 0.0)));
    CHECK(y.value().values() == std::vector<double>{3, 2});

    std::mt19937_64 rng(4);
    const Tensor x = random_tensor({4, 3}, rng);
    const Var id = linear(g.constant(x), g.constant(Tensor(Shape{3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1})),
                          g.constant(Tensor(Shape{3}, 0.0)));
    CHECK(id.value().values() == x.values());

    const Tensor xr = random_tensor({2, 3, 5}, rng);
    const Tensor w = random_tensor({4, 5}, rng);
    const Tensor b = random_tensor({4}, rng);
    const Var out = linear(g.constant(xr), g.constant(w), g.constant(b));
    REQUIRE(out.shape() == Shape{2, 3, 4});
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t o = 0; o < 4; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < 5; ++i) acc += xr[r * 5 + i] * w[o * 5 + i];
            CHECK(std::abs(out.value()[r * 4 + o] - acc) <= 1e-12);
        }
    }
}

TEST_CASE("layer_norm examples") {
    Graph g;
    const Var y = layer_norm(g.constant(Tensor(Shape{3}, std::vector<double>{1, 2, 3})),
                             g.constant(Tensor(Shape{3}, 1.0)), g.constant(Tensor(Shape{3}, 0.0)), 0.0);
    const double s = std::sqrt(1.5);  // 1 / sqrt(2/3)
    CHECK(y.value()[0] == doctest::Approx(-s).epsilon(1e-14));
    CHECK(y.value()[1] == 0.0);
    CHECK(y.value()[2] == doctest::Approx(s).epsilon(1e-14));

    const Tensor beta(Shape{4}, std::vector<double>{0.1, -0.2, 0.3, 0.4});
    const Var c = layer_norm(g.constant(Tensor(Shape{2, 4}, 7.0)),
                             g.constant(Tensor(Shape{4}, std::vector<double>{2, 3, 4, 5})), g.constant(beta), 1e-6);
    for (std::size_t i = 0; i < 8; ++i) CHECK(c.value()[i] == beta[i % 4]);

    std::mt19937_64 rng(5);
    const Var z = layer_norm(g.constant(random_tensor({3, 4}, rng)), g.constant(Tensor(Shape{4}, 0.0)),
                             g.constant(beta), 1e-6);
    for (std::size_t i = 0; i < 12; ++i) CHECK(z.value()[i] == beta[i % 4]);

    CHECK_THROWS(layer_norm(g.constant(Tensor(Shape{2}, 1.0)), g.constant(Tensor(Shape{2}, 1.0)),
                            g.constant(Tensor(Shape{2}, 0.0)), 0.0));
}

TEST_CASE("gelu examples") {
    Graph g;
    const Var y = gelu(g.constant(Tensor(Shape{3}, std::vector<double>{0.0, 20.0, -20.0})));
    CHECK(y.value()[0] == 0.0);
    CHECK(y.value()[1] == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(std::abs(y.value()[2]) < 1e-12);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<Tensor> in{random_tensor({6}, rng)};
        for (auto& v : in[0].data()) v *= 3.0;
        const auto r = check_gradients([](Graph& gr, std::span<const Var> v) { return sum(gelu(v[0])); }, in);
        CHECK(r.max_rel_error <= 1e-6);
    }
}

TEST_CASE("attention examples") {
    std::mt19937_64 rng(6);
    const std::size_t d = 3;
    const Tensor wq = random_tensor({d, d}, rng), wk = random_tensor({d, d}, rng);
    const Tensor wv = random_tensor({d, d}, rng), wo = random_tensor({d, d}, rng);

    SUBCASE("single token") {
        const Tensor x = random_tensor({2, 1, d}, rng);
        const Tensor a = attention_weights(x, wq, wk);
        CHECK(a[0] == 1.0);
        CHECK(a[1] == 1.0);
        Graph g;
        const Var y = attention(g.constant(x), g.constant(wq), g.constant(wk), g.constant(wv), g.constant(wo));
        for (std::size_t n = 0; n < 2; ++n) {
            for (std::size_t j = 0; j < d; ++j) {
                double expect = 0.0;
                for (std::size_t p = 0; p < d; ++p) {
                    double v = 0.0;
                    for (std::size_t i = 0; i < d; ++i) v += x[n * d + i] * wv[i * d + p];
                    expect += v * wo[p * d + j];
                }
                CHECK(y.value()[n * d + j] == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }
    SUBCASE("identical tokens attend uniformly") {
        Tensor x(Shape{1, 4, d});
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t i = 0; i < d; ++i) x[t * d + i] = 0.3 * static_cast<double>(i) - 0.2;
        const Tensor a = attention_weights(x, wq, wk);
        for (double v : a.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("rows sum to one") {
        const Tensor x = random_tensor({3, 5, d}, rng);
        const Tensor a = attention_weights(x, wq, wk);
        for (std::size_t r = 0; r < 15; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 5; ++c) s += a[r * 5 + c];
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("global_avg_pool examples") {
    Graph g;
    for (double v : global_avg_pool(g.constant(Tensor(Shape{1, 2, 3, 3}, 0.7))).value().data()) {
        CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
    }
    const Var x = g.variable(Tensor(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    const Var y = global_avg_pool(x);
    CHECK(y.value()[0] == 2.5);
    g.backward(sum(y));
    for (double v : g.grad(x)) CHECK(v == 0.25);
}

TEST_CASE("backward semantics") {
    SUBCASE("sum gives ones") {
        Graph g;
        const Var x = g.variable(Tensor(Shape{2, 3}, 0.5));
        g.backward(sum(x));
        for (double v : g.grad(x)) CHECK(v == 1.0);
    }
    SUBCASE("product of scalars") {
        Graph g;
        const Var x = g.variable(Tensor::scalar(3.0));
        const Var y = g.variable(Tensor::scalar(-2.0));
        g.backward(mul(x, y));
        CHECK(g.grad(x)[0] == -2.0);
        CHECK(g.grad(y)[0] == 3.0);
    }
    SUBCASE("non-scalar loss is rejected") {
        Graph g;
        const Var x = g.variable(Tensor(Shape{2}, 1.0));
        CHECK_THROWS_AS(g.backward(x), std::invalid_argument);
    }
    SUBCASE("a tensor consumed twice accumulates both branches") {
        std::mt19937_64 rng(7);
        const Tensor xv = random_tensor({4}, rng);
        const Tensor a = random_tensor({4}, rng), b = random_tensor({4}, rng);
        Graph g1;
        const Var x1 = g1.variable(xv);
        g1.backward(add(sum(mul(x1, g1.constant(a))), sum(mul(gelu(x1), g1.constant(b)))));
        // Same function with the two uses split across separate leaves.
        Graph g2;
        const Var u = g2.variable(xv), v = g2.variable(xv);
        g2.backward(add(sum(mul(u, g2.constant(a))), sum(mul(gelu(v), g2.constant(b)))));
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(g1.grad(x1)[i] == doctest::Approx(g2.grad(u)[i] + g2.grad(v)[i]).epsilon(1e-15));
        }
    }
    SUBCASE("bound parameters accumulate across passes") {
        Tensor p(Shape{3}, 1.0);
        for (int pass = 0; pass < 2; ++pass) {
            Graph g;
            g.backward(sum(g.parameter(p)));
        }
        for (double v : p.grad()) CHECK(v == 2.0);
        p.zero_grad();
        for (double v : p.grad()) CHECK(v == 0.0);
    }
}

TEST_CASE("composite conv-LN-linear-cosine gradient") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed + 100);
        std::vector<Tensor> in{random_tensor({2, 2, 4, 4}, rng), random_tensor({3, 2, 2, 2}, rng),
                               random_tensor({3}, rng),          random_tensor({3}, rng),
                               random_tensor({3}, rng),          random_tensor({4, 12}, rng),
                               random_tensor({4}, rng),          random_tensor({2, 4}, rng)};
        const auto build = [](Graph& g, std::span<const Var> v) {
            Var h = conv2d(v[0], v[1], v[2], 2, 0);
            h = to_channels_first(layer_norm(to_channels_last(h), v[3], v[4], 1e-6));
            h = linear(reshape(h, {2, 12}), v[5], v[6]);
            return mean(row_cosine(h, v[7]));
        };
        CHECK(check_gradients(build, in).max_rel_error <= 1e-4);
    }
}

TEST_CASE("finite_diff_check examples") {
    std::mt19937_64 rng(8);
    SUBCASE("linear function") {
        std::vector<Tensor> in{random_tensor({5}, rng)};
        const Tensor c = random_tensor({5}, rng);
        const auto r = check_gradients([&](Graph& g, std::span<const Var> v) { return sum(mul(v[0], g.constant(c))); },
                                       in);
        CHECK(r.max_rel_error <= 1e-9);
    }
    SUBCASE("constant function") {
        std::vector<Tensor> in{random_tensor({5}, rng)};
        const auto r = check_gradients(
            [](Graph& g, std::span<const Var> v) { return add(sum(affine(v[0], 0.0, 0.0)), g.constant(Tensor::scalar(2.0))); },
            in);
        for (double v : in[0].grad()) CHECK(v == 0.0);
        CHECK(r.max_rel_error == 0.0);
    }
    SUBCASE("a wrong backward is detected") {
        // Square with a derivative of x instead of 2x.
        const auto bad_square = [](Var x) {
            Tensor y = x.value();
            for (auto& v : y.data()) v *= v;
            return x.graph->record(std::move(y), {x}, [](Graph& g, std::size_t self) {
                const auto dy = g.out_grad(self);
                const auto xv = g.value(g.input(self, 0)).data();
                auto dx = g.in_grad(self, 0);
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * xv[i];
            });
        };
        std::vector<Tensor> in{random_tensor({4}, rng)};
        const auto r = check_gradients([&](Graph&, std::span<const Var> v) { return sum(bad_square(v[0])); }, in);
        CHECK(r.max_rel_error > 0.4);
    }
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(0.0, 1e-9) == doctest::Approx(0.1));
}

TEST_CASE("forward ops are pure") {
    std::mt19937_64 rng(9);
    const Tensor x = random_tensor({2, 2, 4, 4}, rng), w = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2}, rng);
    Graph g1, g2;
    const Var y1 = gelu(conv2d(g1.constant(x), g1.constant(w), g1.constant(b), 1, 1));
    const Var y2 = gelu(conv2d(g2.constant(x), g2.constant(w), g2.constant(b), 1, 1));
    CHECK(y1.value().values() == y2.value().values());
    CHECK(y1.value().all_finite());
}
