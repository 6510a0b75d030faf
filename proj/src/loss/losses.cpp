#include "hfr/loss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hfr/grad/ops.hpp"

namespace hfr::loss {

using grad::Graph;
using grad::Shape;
using grad::Tensor;
using grad::Var;

namespace {

void check_unit_range(const char* what, double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
}

void check_label(int y) {
    if (y != 0 && y != 1) throw std::invalid_argument("label must be 0 or 1, got " + std::to_string(y));
}

}  // namespace

void LossWeights::validate() const {
    check_unit_range("lambda", lambda);
    check_unit_range("margin", margin);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw grad::DimensionError("cosine", "dim", "embedding lengths differ");
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (!(aa > 1e-24) || !(bb > 1e-24)) throw DegenerateEmbedding("cosine: embedding norm <= 1e-12");
    return std::clamp(dot / std::sqrt(aa * bb), -1.0, 1.0);
}

double contrastive_loss(std::span<const double> e_s, std::span<const double> e_t, int y, double margin) {
    check_label(y);
    check_unit_range("margin", margin);
    const double c = cosine(e_s, e_t);
    return y == 1 ? 1.0 - c : std::max(0.0, c - margin);
}

double self_distillation_loss(std::span<const double> e_teacher, std::span<const double> e_student) {
    return 1.0 - cosine(e_teacher, e_student);
}

double total_loss(double l_c, double l_sdl, double lambda) {
    check_unit_range("lambda", lambda);
    return (1.0 - lambda) * l_c + lambda * l_sdl;
}

namespace {

Var checked_cosine(Var a, Var b) {
    try {
        return grad::row_cosine(a, b);
    } catch (const std::domain_error& e) {
        throw DegenerateEmbedding(e.what());
    }
}

}  // namespace

Var contrastive_rows(Var e_s, Var e_t, std::span<const int> y, double margin) {
    check_unit_range("margin", margin);
    const Var c = checked_cosine(e_s, e_t);
    const std::size_t n = c.value().numel();
    if (y.size() != n) throw grad::DimensionError("contrastive_rows", "batch", "label count differs from rows");
    Tensor pos_mask(Shape{n}), neg_mask(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
        check_label(y[i]);
        pos_mask[i] = y[i] == 1 ? 1.0 : 0.0;
        neg_mask[i] = 1.0 - pos_mask[i];
    }
    Graph& g = *c.graph;
    const Var pos = grad::mul(grad::affine(c, -1.0, 1.0), g.constant(std::move(pos_mask)));
    const Var neg = grad::mul(grad::relu(grad::affine(c, 1.0, -margin)), g.constant(std::move(neg_mask)));
    return grad::add(pos, neg);
}

Var self_distillation_rows(Var e_teacher, Var e_student) {
    return grad::affine(checked_cosine(e_teacher, e_student), -1.0, 1.0);
}

Var total(Var l_c, Var l_sdl, double lambda) {
    check_unit_range("lambda", lambda);
    return grad::add(grad::affine(l_c, 1.0 - lambda, 0.0), grad::affine(l_sdl, lambda, 0.0));
}

ObjectiveTerms batch_objective(Graph& graph, net::Model& student, const net::Model& teacher,
                               const data::PairBatch& batch, const LossWeights& weights) {
    weights.validate();
    if (batch.size() == 0) throw std::invalid_argument("batch_objective: empty batch");
    if (student.config() != teacher.config()) {
        throw std::invalid_argument("batch_objective: teacher and student topologies differ");
    }
    const Var xs = graph.constant(batch.x_source);
    const Var xt = graph.constant(batch.x_target);

    const Var e_s = net::forward(graph, student, xs);
    const Var e_t = net::forward(graph, student, xt);
    const Var e_teacher = net::forward(graph, teacher, xs);

    const Var l_c = grad::mean(contrastive_rows(e_s, e_t, batch.y, weights.margin));
    const Var l_sdl = grad::mean(self_distillation_rows(e_teacher, e_s));
    return {total(l_c, l_sdl, weights.lambda), l_c, l_sdl};
}

}  // namespace hfr::loss
