#include "hfr/grad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hfr::grad {

namespace {

void expect_rank(const char* op, const Var& v, std::size_t rank, const char* what) {
    if (v.value().rank() != rank) {
        throw DimensionError(op, "rank", std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                                             shape_to_string(v.shape()));
    }
}

void expect_dim(const char* op, const char* axis, std::size_t got, std::size_t want) {
    if (got != want) {
        throw DimensionError(op, axis, "expected " + std::to_string(want) + ", got " + std::to_string(got));
    }
}

void expect_same_shape(const char* op, const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(op, "shape", shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
}

// Output positions [lo, hi) along one axis for which the input tap
// (o * stride + k - pad) lands inside [0, in).
struct Range {
    std::size_t lo;
    std::size_t hi;
};

Range valid_range(std::size_t in, std::size_t out, std::size_t stride, std::size_t k, std::size_t pad) {
    // o * stride + k >= pad  and  o * stride + k - pad <= in - 1
    std::size_t lo = 0;
    if (pad > k) lo = (pad - k + stride - 1) / stride;
    std::size_t hi = 0;
    if (in - 1 + pad >= k) hi = (in - 1 + pad - k) / stride + 1;
    hi = std::min(hi, out);
    if (lo > hi) lo = hi;
    return {lo, hi};
}

std::size_t conv_out(const char* op, std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                     const char* axis) {
    if (in + 2 * pad < k) {
        throw DimensionError(op, axis, "kernel " + std::to_string(k) + " larger than padded input " +
                                           std::to_string(in + 2 * pad));
    }
    return (in + 2 * pad - k) / stride + 1;
}

std::size_t rows_of(const Shape& s) {
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
    return r;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var conv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t padding) {
    constexpr const char* op = "conv2d";
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    expect_rank(op, input, 4, "input");
    expect_rank(op, weight, 4, "weight");
    expect_rank(op, bias, 1, "bias");
    const auto& xs = input.shape();
    const auto& ws = weight.shape();
    const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    const std::size_t o = ws[0], kh = ws[2], kw = ws[3];
    expect_dim(op, "in_channels", ws[1], c);
    expect_dim(op, "bias", bias.shape()[0], o);
    const std::size_t oh = conv_out(op, h, kh, stride, padding, "height");
    const std::size_t ow = conv_out(op, w, kw, stride, padding, "width");

    const auto x = input.value().data();
    const auto wt = weight.value().data();
    const auto b = bias.value().data();
    Tensor out(Shape{n, o, oh, ow});
    auto y = out.data();

    for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t oi = 0; oi < o; ++oi) {
            double* yp = &y[(ni * o + oi) * oh * ow];
            std::fill(yp, yp + oh * ow, b[oi]);
            for (std::size_t ci = 0; ci < c; ++ci) {
                const double* xp = &x[(ni * c + ci) * h * w];
                const double* wp = &wt[(oi * c + ci) * kh * kw];
                for (std::size_t ki = 0; ki < kh; ++ki) {
                    const Range ri = valid_range(h, oh, stride, ki, padding);
                    for (std::size_t kj = 0; kj < kw; ++kj) {
                        const Range rj = valid_range(w, ow, stride, kj, padding);
                        const double wv = wp[ki * kw + kj];
                        for (std::size_t i = ri.lo; i < ri.hi; ++i) {
                            const double* xr = xp + (i * stride + ki - padding) * w;
                            double* yr = yp + i * ow;
                            for (std::size_t j = rj.lo; j < rj.hi; ++j) yr[j] += wv * xr[j * stride + kj - padding];
                        }
                    }
                }
            }
        }
    }

    return input.graph->record(
        std::move(out), {input, weight, bias},
        [n, c, h, w, o, kh, kw, oh, ow, stride, padding](Graph& g, std::size_t self) {
            const auto dy = g.out_grad(self);
            const auto x = g.value(g.input(self, 0)).data();
            const auto wt = g.value(g.input(self, 1)).data();
            auto dx = g.in_grad(self, 0);
            auto dw = g.in_grad(self, 1);
            auto db = g.in_grad(self, 2);
            for (std::size_t ni = 0; ni < n; ++ni) {
                for (std::size_t oi = 0; oi < o; ++oi) {
                    const double* gp = &dy[(ni * o + oi) * oh * ow];
                    if (!db.empty()) {
                        double s = 0.0;
                        for (std::size_t k = 0; k < oh * ow; ++k) s += gp[k];
                        db[oi] += s;
                    }
                    for (std::size_t ci = 0; ci < c; ++ci) {
                        const std::size_t xoff = (ni * c + ci) * h * w;
                        const std::size_t woff = (oi * c + ci) * kh * kw;
                        for (std::size_t ki = 0; ki < kh; ++ki) {
                            const Range ri = valid_range(h, oh, stride, ki, padding);
                            for (std::size_t kj = 0; kj < kw; ++kj) {
                                const Range rj = valid_range(w, ow, stride, kj, padding);
                                const double wv = wt[woff + ki * kw + kj];
                                double acc = 0.0;
                                for (std::size_t i = ri.lo; i < ri.hi; ++i) {
                                    const std::size_t row = xoff + (i * stride + ki - padding) * w + kj - padding;
                                    const double* gr = gp + i * ow;
                                    if (!dx.empty()) {
                                        for (std::size_t j = rj.lo; j < rj.hi; ++j) dx[row + j * stride] += wv * gr[j];
                                    }
                                    if (!dw.empty()) {
                                        for (std::size_t j = rj.lo; j < rj.hi; ++j) acc += gr[j] * x[row + j * stride];
                                    }
                                }
                                if (!dw.empty()) dw[woff + ki * kw + kj] += acc;
                            }
                        }
                    }
                }
            }
        });
}

Var depthwise_conv2d(Var input, Var weight, Var bias, std::size_t padding) {
    constexpr const char* op = "depthwise_conv2d";
    expect_rank(op, input, 4, "input");
    expect_rank(op, weight, 4, "weight");
    expect_rank(op, bias, 1, "bias");
    const auto& xs = input.shape();
    const auto& ws = weight.shape();
    const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    const std::size_t kh = ws[2], kw = ws[3];
    expect_dim(op, "channels", ws[0], c);
    expect_dim(op, "kernel_depth", ws[1], 1);
    expect_dim(op, "bias", bias.shape()[0], c);
    const std::size_t oh = conv_out(op, h, kh, 1, padding, "height");
    const std::size_t ow = conv_out(op, w, kw, 1, padding, "width");

    const auto x = input.value().data();
    const auto wt = weight.value().data();
    const auto b = bias.value().data();
    Tensor out(Shape{n, c, oh, ow});
    auto y = out.data();
    for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            double* yp = &y[(ni * c + ci) * oh * ow];
            const double* xp = &x[(ni * c + ci) * h * w];
            const double* wp = &wt[ci * kh * kw];
            std::fill(yp, yp + oh * ow, b[ci]);
            for (std::size_t ki = 0; ki < kh; ++ki) {
                const Range ri = valid_range(h, oh, 1, ki, padding);
                for (std::size_t kj = 0; kj < kw; ++kj) {
                    const Range rj = valid_range(w, ow, 1, kj, padding);
                    const double wv = wp[ki * kw + kj];
                    for (std::size_t i = ri.lo; i < ri.hi; ++i) {
                        const double* xr = xp + (i + ki - padding) * w;
                        double* yr = yp + i * ow;
                        for (std::size_t j = rj.lo; j < rj.hi; ++j) yr[j] += wv * xr[j + kj - padding];
                    }
                }
            }
        }
    }

    return input.graph->record(
        std::move(out), {input, weight, bias}, [n, c, h, w, kh, kw, oh, ow, padding](Graph& g, std::size_t self) {
            const auto dy = g.out_grad(self);
            const auto x = g.value(g.input(self, 0)).data();
            const auto wt = g.value(g.input(self, 1)).data();
            auto dx = g.in_grad(self, 0);
            auto dw = g.in_grad(self, 1);
            auto db = g.in_grad(self, 2);
            for (std::size_t ni = 0; ni < n; ++ni) {
                for (std::size_t ci = 0; ci < c; ++ci) {
                    const double* gp = &dy[(ni * c + ci) * oh * ow];
                    const std::size_t xoff = (ni * c + ci) * h * w;
                    if (!db.empty()) {
                        double s = 0.0;
                        for (std::size_t k = 0; k < oh * ow; ++k) s += gp[k];
                        db[ci] += s;
                    }
                    for (std::size_t ki = 0; ki < kh; ++ki) {
                        const Range ri = valid_range(h, oh, 1, ki, padding);
                        for (std::size_t kj = 0; kj < kw; ++kj) {
                            const Range rj = valid_range(w, ow, 1, kj, padding);
                            const double wv = wt[ci * kh * kw + ki * kw + kj];
                            double acc = 0.0;
                            for (std::size_t i = ri.lo; i < ri.hi; ++i) {
                                const std::size_t row = xoff + (i + ki - padding) * w + kj - padding;
                                const double* gr = gp + i * ow;
                                if (!dx.empty()) {
                                    for (std::size_t j = rj.lo; j < rj.hi; ++j) dx[row + j] += wv * gr[j];
                                }
                                if (!dw.empty()) {
                                    for (std::size_t j = rj.lo; j < rj.hi; ++j) acc += gr[j] * x[row + j];
                                }
                            }
                            if (!dw.empty()) dw[ci * kh * kw + ki * kw + kj] += acc;
                        }
                    }
                }
            }
        });
}

Var linear(Var input, Var weight, Var bias) {
    constexpr const char* op = "linear";
    expect_rank(op, weight, 2, "weight");
    expect_rank(op, bias, 1, "bias");
    const auto& xs = input.shape();
    if (xs.empty()) throw DimensionError(op, "rank", "input must have rank >= 1");
    const std::size_t din = xs.back();
    const std::size_t dout = weight.shape()[0];
    expect_dim(op, "in_features", weight.shape()[1], din);
    expect_dim(op, "bias", bias.shape()[0], dout);
    const std::size_t rows = rows_of(xs);

    Shape os = xs;
    os.back() = dout;
    Tensor out(os);
    const auto x = input.value().data();
    const auto wt = weight.value().data();
    const auto b = bias.value().data();
    auto y = out.data();
    // Row-times-transposed-weight keeps the inner loop contiguous over outputs.
    std::vector<double> wt_t(din * dout);
    for (std::size_t o = 0; o < dout; ++o) {
        for (std::size_t i = 0; i < din; ++i) wt_t[i * dout + o] = wt[o * din + i];
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = &x[r * din];
        double* yr = &y[r * dout];
        std::copy(b.begin(), b.end(), yr);
        for (std::size_t i = 0; i < din; ++i) {
            const double xv = xr[i];
            const double* wr = &wt_t[i * dout];
            for (std::size_t o = 0; o < dout; ++o) yr[o] += xv * wr[o];
        }
    }

    return input.graph->record(std::move(out), {input, weight, bias}, [rows, din, dout](Graph& g, std::size_t self) {
        const auto dy = g.out_grad(self);
        const auto x = g.value(g.input(self, 0)).data();
        const auto wt = g.value(g.input(self, 1)).data();
        auto dx = g.in_grad(self, 0);
        auto dw = g.in_grad(self, 1);
        auto db = g.in_grad(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = &dy[r * dout];
            const double* xr = &x[r * din];
            for (std::size_t o = 0; o < dout; ++o) {
                const double go = gr[o];
                if (!db.empty()) db[o] += go;
                if (!dx.empty()) {
                    const double* wr = &wt[o * din];
                    double* dxr = &dx[r * din];
                    for (std::size_t i = 0; i < din; ++i) dxr[i] += go * wr[i];
                }
                if (!dw.empty()) {
                    double* dwr = &dw[o * din];
                    for (std::size_t i = 0; i < din; ++i) dwr[i] += go * xr[i];
                }
            }
        }
    });
}

Var layer_norm(Var input, Var gamma, Var beta, double epsilon) {
    constexpr const char* op = "layer_norm";
    if (!(epsilon >= 0.0)) throw std::invalid_argument("layer_norm: epsilon must be >= 0");
    expect_rank(op, gamma, 1, "gamma");
    expect_rank(op, beta, 1, "beta");
    const auto& xs = input.shape();
    if (xs.empty()) throw DimensionError(op, "rank", "input must have rank >= 1");
    const std::size_t d = xs.back();
    expect_dim(op, "gamma", gamma.shape()[0], d);
    expect_dim(op, "beta", beta.shape()[0], d);
    const std::size_t rows = rows_of(xs);

    struct Saved {
        std::vector<double> xhat;
        std::vector<double> inv_std;
    };
    auto saved = std::make_shared<Saved>();
    saved->xhat.resize(rows * d);
    saved->inv_std.resize(rows);

    Tensor out(xs);
    const auto x = input.value().data();
    const auto gm = gamma.value().data();
    const auto bt = beta.value().data();
    auto y = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = &x[r * d];
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(d);
        const double denom = var + epsilon;
        if (!(denom > 0.0)) throw std::domain_error("layer_norm: zero variance with epsilon = 0");
        const double inv = 1.0 / std::sqrt(denom);
        saved->inv_std[r] = inv;
        for (std::size_t i = 0; i < d; ++i) {
            const double xh = (xr[i] - mu) * inv;
            saved->xhat[r * d + i] = xh;
            y[r * d + i] = xh * gm[i] + bt[i];
        }
    }

    return input.graph->record(std::move(out), {input, gamma, beta}, [rows, d, saved](Graph& g, std::size_t self) {
        const auto dy = g.out_grad(self);
        const auto gm = g.value(g.input(self, 1)).data();
        auto dx = g.in_grad(self, 0);
        auto dg = g.in_grad(self, 1);
        auto db = g.in_grad(self, 2);
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = &dy[r * d];
            const double* xh = &saved->xhat[r * d];
            if (!dg.empty()) {
                for (std::size_t i = 0; i < d; ++i) dg[i] += gr[i] * xh[i];
            }
            if (!db.empty()) {
                for (std::size_t i = 0; i < d; ++i) db[i] += gr[i];
            }
            if (!dx.empty()) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double gh = gr[i] * gm[i];
                    m1 += gh;
                    m2 += gh * xh[i];
                }
                m1 *= inv_d;
                m2 *= inv_d;
                const double inv = saved->inv_std[r];
                for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += inv * (gr[i] * gm[i] - m1 - xh[i] * m2);
            }
        }
    });
}

Var gelu(Var input) {
    const auto x = input.value().data();
    Tensor out(input.shape());
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        y[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    return input.graph->record(std::move(out), {input}, [](Graph& g, std::size_t self) {
        auto dx = g.in_grad(self, 0);
        if (dx.empty()) return;
        const auto dy = g.out_grad(self);
        const auto x = g.value(g.input(self, 0)).data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = x[i];
            const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            dx[i] += dy[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
        }
    });
}

namespace {

// Row-major helpers for the attention kernel; all matrices are small and dense.
// out (r x c) = a (r x k) * b (k x c)
void matmul(const double* a, const double* b, double* out, std::size_t r, std::size_t k, std::size_t c) {
    for (std::size_t i = 0; i < r; ++i) {
        double* o = out + i * c;
        std::fill(o, o + c, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* br = b + p * c;
            for (std::size_t j = 0; j < c; ++j) o[j] += av * br[j];
        }
    }
}

// out (r x c) += a (r x k) * b^T, b is (c x k)
void matmul_bt_acc(const double* a, const double* b, double* out, std::size_t r, std::size_t k, std::size_t c) {
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            out[i * c + j] += acc;
        }
    }
}

// out (r x c) += a^T * b, a is (k x r), b is (k x c)
void matmul_at_acc(const double* a, const double* b, double* out, std::size_t r, std::size_t k, std::size_t c) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* br = b + p * c;
        for (std::size_t i = 0; i < r; ++i) {
            const double av = a[p * r + i];
            double* o = out + i * c;
            for (std::size_t j = 0; j < c; ++j) o[j] += av * br[j];
        }
    }
}

// Softmax(Q K^T / sqrt(d)) for one sample, written into probs (t x t).
void attention_probs(const double* q, const double* k, double* probs, std::size_t t, std::size_t d) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < t; ++i) {
        double* row = probs + i * t;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < t; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < d; ++p) s += q[i * d + p] * k[j * d + p];
            row[j] = s * scale;
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (std::size_t j = 0; j < t; ++j) row[j] /= z;
    }
}

void check_attention_shapes(const Shape& xs, const Shape& wq, const Shape& wk) {
    constexpr const char* op = "attention";
    if (xs.size() != 3) throw DimensionError(op, "rank", "tokens must be N x T x D, got " + shape_to_string(xs));
    const std::size_t d = xs[2];
    for (const Shape* s : {&wq, &wk}) {
        if (s->size() != 2) throw DimensionError(op, "rank", "projection must be D x D");
        expect_dim(op, "proj_rows", (*s)[0], d);
        expect_dim(op, "proj_cols", (*s)[1], d);
    }
}

}  // namespace

Tensor attention_weights(const Tensor& tokens, const Tensor& wq, const Tensor& wk) {
    check_attention_shapes(tokens.shape(), wq.shape(), wk.shape());
    const std::size_t n = tokens.dim(0), t = tokens.dim(1), d = tokens.dim(2);
    Tensor out(Shape{n, t, t});
    std::vector<double> q(t * d), k(t * d);
    for (std::size_t ni = 0; ni < n; ++ni) {
        const double* x = &tokens.data()[ni * t * d];
        matmul(x, wq.data().data(), q.data(), t, d, d);
        matmul(x, wk.data().data(), k.data(), t, d, d);
        attention_probs(q.data(), k.data(), &out.data()[ni * t * t], t, d);
    }
    return out;
}

Var attention(Var tokens, Var wq, Var wk, Var wv, Var wo) {
    check_attention_shapes(tokens.shape(), wq.shape(), wk.shape());
    check_attention_shapes(tokens.shape(), wv.shape(), wo.shape());
    const std::size_t n = tokens.shape()[0], t = tokens.shape()[1], d = tokens.shape()[2];

    struct Saved {
        std::vector<double> q, k, v, probs, ctx;
    };
    auto saved = std::make_shared<Saved>();
    saved->q.resize(n * t * d);
    saved->k.resize(n * t * d);
    saved->v.resize(n * t * d);
    saved->ctx.resize(n * t * d);
    saved->probs.resize(n * t * t);

    Tensor out(Shape{n, t, d});
    const double* x = tokens.value().data().data();
    for (std::size_t ni = 0; ni < n; ++ni) {
        const std::size_t off = ni * t * d;
        matmul(x + off, wq.value().data().data(), &saved->q[off], t, d, d);
        matmul(x + off, wk.value().data().data(), &saved->k[off], t, d, d);
        matmul(x + off, wv.value().data().data(), &saved->v[off], t, d, d);
        attention_probs(&saved->q[off], &saved->k[off], &saved->probs[ni * t * t], t, d);
        matmul(&saved->probs[ni * t * t], &saved->v[off], &saved->ctx[off], t, t, d);
        matmul(&saved->ctx[off], wo.value().data().data(), &out.data()[off], t, d, d);
    }

    return tokens.graph->record(
        std::move(out), {tokens, wq, wk, wv, wo}, [n, t, d, saved](Graph& g, std::size_t self) {
            const auto dy = g.out_grad(self);
            const double* x = g.value(g.input(self, 0)).data().data();
            const double* wq = g.value(g.input(self, 1)).data().data();
            const double* wk = g.value(g.input(self, 2)).data().data();
            const double* wv = g.value(g.input(self, 3)).data().data();
            const double* wo = g.value(g.input(self, 4)).data().data();
            auto dx = g.in_grad(self, 0);
            auto dwq = g.in_grad(self, 1);
            auto dwk = g.in_grad(self, 2);
            auto dwv = g.in_grad(self, 3);
            auto dwo = g.in_grad(self, 4);
            const double scale = 1.0 / std::sqrt(static_cast<double>(d));

            std::vector<double> dctx(t * d), dprobs(t * t), dscores(t * t), dq(t * d), dk(t * d), dv(t * d);
            for (std::size_t ni = 0; ni < n; ++ni) {
                const std::size_t off = ni * t * d;
                const double* gy = &dy[off];
                const double* probs = &saved->probs[ni * t * t];
                if (!dwo.empty()) matmul_at_acc(&saved->ctx[off], gy, dwo.data(), d, t, d);
                std::fill(dctx.begin(), dctx.end(), 0.0);
                matmul_bt_acc(gy, wo, dctx.data(), t, d, d);

                std::fill(dprobs.begin(), dprobs.end(), 0.0);
                matmul_bt_acc(dctx.data(), &saved->v[off], dprobs.data(), t, d, t);
                std::fill(dv.begin(), dv.end(), 0.0);
                matmul_at_acc(probs, dctx.data(), dv.data(), t, t, d);

                for (std::size_t i = 0; i < t; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < t; ++j) dot += dprobs[i * t + j] * probs[i * t + j];
                    for (std::size_t j = 0; j < t; ++j) {
                        dscores[i * t + j] = probs[i * t + j] * (dprobs[i * t + j] - dot) * scale;
                    }
                }
                // dq = dS K, dk = dS^T Q
                matmul(dscores.data(), &saved->k[off], dq.data(), t, t, d);
                std::fill(dk.begin(), dk.end(), 0.0);
                matmul_at_acc(dscores.data(), &saved->q[off], dk.data(), t, t, d);

                if (!dwq.empty()) matmul_at_acc(x + off, dq.data(), dwq.data(), d, t, d);
                if (!dwk.empty()) matmul_at_acc(x + off, dk.data(), dwk.data(), d, t, d);
                if (!dwv.empty()) matmul_at_acc(x + off, dv.data(), dwv.data(), d, t, d);
                if (!dx.empty()) {
                    double* gx = &dx[off];
                    matmul_bt_acc(dq.data(), wq, gx, t, d, d);
                    matmul_bt_acc(dk.data(), wk, gx, t, d, d);
                    matmul_bt_acc(dv.data(), wv, gx, t, d, d);
                }
            }
        });
}

Var global_avg_pool(Var input) {
    expect_rank("global_avg_pool", input, 4, "input");
    const auto& xs = input.shape();
    const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
    Tensor out(Shape{n, c});
    const auto x = input.value().data();
    for (std::size_t p = 0; p < n * c; ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < hw; ++k) s += x[p * hw + k];
        out[p] = s / static_cast<double>(hw);
    }
    return input.graph->record(std::move(out), {input}, [n, c, hw](Graph& g, std::size_t self) {
        auto dx = g.in_grad(self, 0);
        if (dx.empty()) return;
        const auto dy = g.out_grad(self);
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t p = 0; p < n * c; ++p) {
            const double gv = dy[p] * inv;
            for (std::size_t k = 0; k < hw; ++k) dx[p * hw + k] += gv;
        }
    });
}

namespace {

// Moves axis 1 of an (A, B, C) view to the back: (A, B, C) -> (A, C, B).
void swap_last_two(std::span<const double> src, std::span<double> dst, std::size_t a, std::size_t b, std::size_t c,
                   bool accumulate) {
    for (std::size_t ai = 0; ai < a; ++ai) {
        const double* s = &src[ai * b * c];
        double* o = &dst[ai * b * c];
        for (std::size_t bi = 0; bi < b; ++bi) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                if (accumulate) {
                    o[ci * b + bi] += s[bi * c + ci];
                } else {
                    o[ci * b + bi] = s[bi * c + ci];
                }
            }
        }
    }
}

}  // namespace

Var to_channels_last(Var input) {
    expect_rank("to_channels_last", input, 4, "input");
    const auto& xs = input.shape();
    const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
    Tensor out(Shape{xs[0], xs[2], xs[3], xs[1]});
    swap_last_two(input.value().data(), out.data(), n, c, hw, false);
    return input.graph->record(std::move(out), {input}, [n, c, hw](Graph& g, std::size_t self) {
        auto dx = g.in_grad(self, 0);
        if (!dx.empty()) swap_last_two(g.out_grad(self), dx, n, hw, c, true);
    });
}

Var to_channels_first(Var input) {
    expect_rank("to_channels_first", input, 4, "input");
    const auto& xs = input.shape();
    const std::size_t n = xs[0], hw = xs[1] * xs[2], c = xs[3];
    Tensor out(Shape{xs[0], xs[3], xs[1], xs[2]});
    swap_last_two(input.value().data(), out.data(), n, hw, c, false);
    return input.graph->record(std::move(out), {input}, [n, c, hw](Graph& g, std::size_t self) {
        auto dx = g.in_grad(self, 0);
        if (!dx.empty()) swap_last_two(g.out_grad(self), dx, n, c, hw, true);
    });
}

Var reshape(Var input, Shape shape) {
    Tensor out(input.shape(), input.value().values());
    out.reshape(std::move(shape));
    return input.graph->record(std::move(out), {input}, [](Graph& g, std::size_t self) {
        auto dx = g.in_grad(self, 0);
        if (dx.empty()) return;
        const auto dy = g.out_grad(self);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    });
}

Var add(Var a, Var b) {
    expect_same_shape("add", a, b);
    Tensor out(a.shape(), a.value().values());
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < bv.size(); ++i) out[i] += bv[i];
    return a.graph->record(std::move(out), {a, b}, [](Graph& g, std::size_t self) {
        const auto dy = g.out_grad(self);
        for (std::size_t k = 0; k < 2; ++k) {
            auto d = g.in_grad(self, k);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
        }
    });
}

Var sub(Var a, Var b) {
    expect_same_shape("sub", a, b);
    Tensor out(a.shape(), a.value().values());
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < bv.size(); ++i) out[i] -= bv[i];
    return a.graph->record(std::move(out), {a, b}, [](Graph& g, std::size_t self) {
        const auto dy = g.out_grad(self);
        auto da = g.in_grad(self, 0);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
        auto db = g.in_grad(self, 1);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] -= dy[i];
    });
}

Var mul(Var a, Var b) {
    expect_same_shape("mul", a, b);
    Tensor out(a.shape(), a.value().values());
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < bv.size(); ++i) out[i] *= bv[i];
    return a.graph->record(std::move(out), {a, b}, [](Graph& g, std::size_t self) {
        const auto dy = g.out_grad(self);
        const auto av = g.value(g.input(self, 0)).data();
        const auto bv = g.value(g.input(self, 1)).data();
        auto da = g.in_grad(self, 0);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
        auto db = g.in_grad(self, 1);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
    });
}

Var affine(Var x, double scale, double shift) {
    Tensor out(x.shape(), x.value().values());
    for (auto& v : out.data()) v = scale * v + shift;
    return x.graph->record(std::move(out), {x}, [scale](Graph& g, std::size_t self) {
        auto dx = g.in_grad(self, 0);
        const auto dy = g.out_grad(self);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += scale * dy[i];
    });
}

Var relu(Var x) {
    Tensor out(x.shape(), x.value().values());
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return x.graph->record(std::move(out), {x}, [](Graph& g, std::size_t self) {
        auto dx = g.in_grad(self, 0);
        const auto dy = g.out_grad(self);
        const auto xv = g.value(g.input(self, 0)).data();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            if (xv[i] > 0.0) dx[i] += dy[i];
        }
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return x.graph->record(Tensor::scalar(s), {x}, [](Graph& g, std::size_t self) {
        auto dx = g.in_grad(self, 0);
        const double gy = g.out_grad(self)[0];
        for (auto& v : dx) v += gy;
    });
}

Var mean(Var x) {
    const double n = static_cast<double>(x.value().numel());
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return x.graph->record(Tensor::scalar(s / n), {x}, [n](Graph& g, std::size_t self) {
        auto dx = g.in_grad(self, 0);
        const double gy = g.out_grad(self)[0] / n;
        for (auto& v : dx) v += gy;
    });
}

Var row_cosine(Var a, Var b) {
    constexpr const char* op = "row_cosine";
    expect_rank(op, a, 2, "a");
    expect_rank(op, b, 2, "b");
    expect_same_shape(op, a, b);
    const std::size_t n = a.shape()[0], d = a.shape()[1];

    // Per row: dot, |a|^2, |b|^2, and r = sqrt(|a|^2 |b|^2). Using the joint
    // square root makes identical rows give exactly 1 and an exactly zero
    // gradient, since sqrt(x*x) == x in IEEE arithmetic.
    struct Saved {
        std::vector<double> aa, bb, r, cos;
    };
    auto saved = std::make_shared<Saved>();
    saved->aa.resize(n);
    saved->bb.resize(n);
    saved->r.resize(n);
    saved->cos.resize(n);

    const auto av = a.value().data();
    const auto bv = b.value().data();
    Tensor out(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            dot += av[i * d + k] * bv[i * d + k];
            aa += av[i * d + k] * av[i * d + k];
            bb += bv[i * d + k] * bv[i * d + k];
        }
        if (!(aa > 1e-24) || !(bb > 1e-24)) {
            throw std::domain_error("row_cosine: degenerate embedding (norm <= 1e-12) in row " + std::to_string(i));
        }
        const double r = std::sqrt(aa * bb);
        const double c = std::clamp(dot / r, -1.0, 1.0);
        saved->aa[i] = aa;
        saved->bb[i] = bb;
        saved->r[i] = r;
        saved->cos[i] = c;
        out[i] = c;
    }

    return a.graph->record(std::move(out), {a, b}, [n, d, saved](Graph& g, std::size_t self) {
        const auto dy = g.out_grad(self);
        const auto av = g.value(g.input(self, 0)).data();
        const auto bv = g.value(g.input(self, 1)).data();
        auto da = g.in_grad(self, 0);
        auto db = g.in_grad(self, 1);
        for (std::size_t i = 0; i < n; ++i) {
            const double gy = dy[i];
            const double c = saved->cos[i];
            const double r = saved->r[i];
            for (std::size_t k = 0; k < d; ++k) {
                const double ak = av[i * d + k];
                const double bk = bv[i * d + k];
                if (!da.empty()) da[i * d + k] += gy * (bk / r - c * ak / saved->aa[i]);
                if (!db.empty()) db[i * d + k] += gy * (ak / r - c * bk / saved->bb[i]);
            }
        }
    });
}

}  // namespace hfr::grad
