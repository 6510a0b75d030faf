#pragma once

#include <span>
#include <stdexcept>

#include "hfr/data/pair_batch.hpp"
#include "hfr/grad/graph.hpp"
#include "hfr/net/backbone.hpp"

namespace hfr::loss {

/// Raised for an embedding whose norm is at or below 1e-12.
class DegenerateEmbedding : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct LossWeights {
    double lambda = 0.75;
    double margin = 0.0;

    void validate() const;
};

/// a.b / (|a| |b|), clamped to [-1, 1].
double cosine(std::span<const double> a, std::span<const double> b);

/// y = 1: 1 - cos(e_s, e_t); y = 0: max(0, cos(e_s, e_t) - margin).
double contrastive_loss(std::span<const double> e_s, std::span<const double> e_t, int y, double margin);

/// 1 - cos(teacher, student).
double self_distillation_loss(std::span<const double> e_teacher, std::span<const double> e_student);

/// (1 - lambda) * l_c + lambda * l_sdl.
double total_loss(double l_c, double l_sdl, double lambda);

// Graph counterparts. Row i of each N x D input is one sample; outputs hold
// one loss value per row.

grad::Var contrastive_rows(grad::Var e_s, grad::Var e_t, std::span<const int> y, double margin);
grad::Var self_distillation_rows(grad::Var e_teacher, grad::Var e_student);
grad::Var total(grad::Var l_c, grad::Var l_sdl, double lambda);

struct ObjectiveTerms {
    grad::Var loss;   ///< scalar: batch mean of the weighted per-sample total
    grad::Var l_c;    ///< scalar: batch mean contrastive term
    grad::Var l_sdl;  ///< scalar: batch mean self-distillation term
};

/// Records the adaptation objective on `graph`. Source images go through both
/// networks, target images through the student only. The teacher enters the
/// graph as constants, so it never receives gradient.
ObjectiveTerms batch_objective(grad::Graph& graph, net::Model& student, const net::Model& teacher,
                               const data::PairBatch& batch, const LossWeights& weights);

}  // namespace hfr::loss
