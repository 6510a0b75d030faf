#include "hfr/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "hfr/eval/protocol.hpp"
#include "hfr/grad/graph.hpp"
#include "hfr/grad/ops.hpp"
#include "hfr/loss/losses.hpp"

namespace hfr::train {

using grad::Graph;
using grad::Tensor;
using grad::Var;

void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params and grads differ in count");
    if (!state.m.empty() && state.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: parameter set changed between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size()) {
            throw grad::DimensionError("adam_step", "numel", "parameter " + std::to_string(i) + " vs its gradient");
        }
        if (!state.m.empty() && state.m[i].size() != params[i].size()) {
            throw grad::DimensionError("adam_step", "numel", "parameter " + std::to_string(i) + " vs its moments");
        }
        for (double g : grads[i]) {
            if (!std::isfinite(g)) {
                throw TrainingDiverged("adam_step: non-finite gradient in parameter " + std::to_string(i));
            }
        }
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            const double g = grads[i][j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            params[i][j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

void adam_step(AdamState& state, std::span<grad::Tensor* const> params) {
    std::vector<std::span<double>> values;
    std::vector<std::span<const double>> grads;
    std::vector<std::vector<double>> zeros;
    zeros.reserve(params.size());
    for (grad::Tensor* p : params) {
        values.push_back(p->data());
        if (p->has_grad()) {
            grads.push_back(p->grad());
        } else {
            zeros.emplace_back(p->numel(), 0.0);
            grads.push_back(zeros.back());
        }
    }
    adam_step(state, values, grads);
}

void TrainConfig::validate() const {
    loss::LossWeights{lambda, margin}.validate();
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) {
        throw std::invalid_argument("positive_fraction must lie in (0, 1)");
    }
    if (adapt.contains(net::ParameterGroup::HEAD)) throw std::invalid_argument("HEAD is not adaptable");
}

void TrainLog::write_csv(std::ostream& out) const {
    out << "step,l_c,l_sdl,l_total\n";
    char buf[128];
    for (const auto& r : steps) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.step, r.l_c, r.l_sdl, r.l_total);
        out << buf;
    }
}

std::size_t steps_per_epoch(std::size_t n_ids, std::size_t samples_per_id, std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    return (n_ids * samples_per_id + batch_size - 1) / batch_size;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<Tensor*> trainable_tensors(net::Model& model) {
    std::vector<Tensor*> out;
    for (auto& p : model.params()) {
        if (p.trainable) out.push_back(&p.tensor);
    }
    return out;
}

void check_finite(double value, const char* what, std::size_t step) {
    if (!std::isfinite(value)) {
        throw TrainingDiverged(std::string(what) + " became non-finite at step " + std::to_string(step));
    }
}

std::uint64_t step_seed(std::uint64_t sampler_seed, std::size_t step) {
    return data::mix_seed(sampler_seed, static_cast<std::uint64_t>(step));
}

}  // namespace

PretrainResult pretrain_source(const net::BackboneConfig& config, const data::Dataset& dataset,
                               std::span<const int> ids, const PretrainOptions& options) {
    if (ids.size() < 2) throw std::invalid_argument("pretrain_source: need at least 2 identities");
    const auto start = Clock::now();
    PretrainResult result{net::build(config, options.init_seed), {}};
    net::Model& model = result.model;
    for (auto& p : model.params()) p.trainable = true;
    const std::vector<Tensor*> params = trainable_tensors(model);

    AdamState adam;
    adam.lr = options.lr;
    const std::size_t per_epoch = steps_per_epoch(ids.size(), dataset.samples_per_id(), options.batch_size);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t s = 0; s < per_epoch; ++s, ++step) {
            const data::PairBatch batch =
                data::sample_pairs(dataset, ids, options.batch_size, options.positive_fraction,
                                   step_seed(options.sampler_seed, step), data::PairMode::SourceOnly);
            Graph graph;
            const Var a = net::forward(graph, model, graph.constant(batch.x_source));
            const Var b = net::forward(graph, model, graph.constant(batch.x_target));
            const Var l = grad::mean(loss::contrastive_rows(a, b, batch.y, options.margin));
            const double lv = l.value()[0];
            check_finite(lv, "pretraining loss", step);
            graph.backward(l);
            adam_step(adam, params);
            model.zero_grads();
            result.log.steps.push_back({step, lv, 0.0, lv});
        }
    }
    for (auto& p : model.params()) {
        p.trainable = false;
        p.tensor.drop_grad();
    }
    result.log.report = adapt::describe(model);
    result.log.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return result;
}

AdaptResult adapt(const net::Model& pretrained, const data::Dataset& dataset, std::span<const int> train_ids,
                  const TrainConfig& config) {
    config.validate();
    if (train_ids.size() < 2) throw std::invalid_argument("adapt: need at least 2 training identities");
    const auto start = Clock::now();

    const net::Model teacher = pretrained;
    AdaptResult result{pretrained, {}};
    net::Model& student = result.model;
    result.log.report = adapt::partition(student, config.adapt);
    const std::vector<Tensor*> params = trainable_tensors(student);

    AdamState adam;
    adam.lr = config.lr;
    const loss::LossWeights weights{config.lambda, config.margin};
    const std::size_t per_epoch = steps_per_epoch(train_ids.size(), dataset.samples_per_id(), config.batch_size);
    std::size_t step = 0;
    if (!params.empty()) {
        for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
            for (std::size_t s = 0; s < per_epoch; ++s, ++step) {
                const data::PairBatch batch =
                    data::sample_pairs(dataset, train_ids, config.batch_size, config.positive_fraction,
                                       step_seed(config.seeds.sampler, step), data::PairMode::CrossModal);
                Graph graph;
                const loss::ObjectiveTerms terms = loss::batch_objective(graph, student, teacher, batch, weights);
                const StepRecord rec{step, terms.l_c.value()[0], terms.l_sdl.value()[0], terms.loss.value()[0]};
                check_finite(rec.l_total, "adaptation loss", step);
                graph.backward(terms.loss);
                adam_step(adam, params);
                student.zero_grads();
                result.log.steps.push_back(rec);
            }
        }
    }
    for (auto& p : student.params()) p.tensor.drop_grad();

    const adapt::FrozenCheck frozen = adapt::verify_frozen(pretrained, student, config.adapt);
    if (!frozen) throw std::logic_error("adapt: frozen parameter changed: " + frozen.offending.front());
    result.log.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return result;
}

std::pair<double, double> retention_eval(const net::Model& pretrained, const net::Model& adapted,
                                         const data::Dataset& dataset, std::span<const int> eval_ids) {
    const auto source = eval::Protocol::Source;
    const double before = eval::evaluate_protocol(pretrained, dataset, eval_ids, source, {}).eer;
    const double after = eval::evaluate_protocol(adapted, dataset, eval_ids, source, {}).eer;
    return {before, after};
}

}  // namespace hfr::train
