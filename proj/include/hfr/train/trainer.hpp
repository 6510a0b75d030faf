#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hfr/adapt/partition.hpp"
#include "hfr/data/syndata.hpp"
#include "hfr/grad/tensor.hpp"
#include "hfr/net/backbone.hpp"

namespace hfr::train {

/// Non-finite loss or gradient during training.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t t = 0;
    /// One moment buffer per optimized tensor, created on the first step.
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam without weight decay. The set and shapes of `params`
/// must stay fixed across calls. Throws TrainingDiverged on a non-finite
/// gradient before touching any state.
void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads);

/// Same update reading each tensor's gradient buffer; a tensor without one is
/// treated as having zero gradient.
void adam_step(AdamState& state, std::span<grad::Tensor* const> params);

struct Seeds {
    std::uint64_t data = 42;     ///< fold split
    std::uint64_t init = 42;     ///< weight initialization
    std::uint64_t sampler = 42;  ///< pair sampling

    bool operator==(const Seeds&) const = default;
};

struct TrainConfig {
    double lambda = 0.75;
    double margin = 0.0;
    double lr = 2e-2;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    adapt::AdaptConfig adapt = adapt::AdaptConfig::parse("LN,ST");
    Seeds seeds;
    double positive_fraction = 0.5;

    /// Throws std::invalid_argument on out-of-range fields.
    void validate() const;
};

struct StepRecord {
    std::size_t step = 0;
    double l_c = 0.0;
    double l_sdl = 0.0;
    double l_total = 0.0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    double wall_seconds = 0.0;
    adapt::PartitionReport report;

    /// Header `step,l_c,l_sdl,l_total`, values at full precision.
    void write_csv(std::ostream& out) const;
};

/// ceil(n_ids * samples_per_id / batch_size)
std::size_t steps_per_epoch(std::size_t n_ids, std::size_t samples_per_id, std::size_t batch_size);

struct PretrainOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double margin = 0.0;
    double positive_fraction = 0.5;
    std::uint64_t init_seed = 42;
    std::uint64_t sampler_seed = 42;
};

struct PretrainResult {
    net::Model model;
    TrainLog log;  ///< l_sdl is zero throughout
};

/// Trains every parameter with the cosine contrastive loss on source-source
/// pairs drawn from `ids`. Returns the model with all parameters frozen.
PretrainResult pretrain_source(const net::BackboneConfig& config, const data::Dataset& dataset,
                               std::span<const int> ids, const PretrainOptions& options);

struct AdaptResult {
    net::Model model;
    TrainLog log;
};

/// Adapts a copy of `pretrained` on cross-modal pairs from `train_ids`, with
/// an untouched copy as the self-distillation teacher. Only parameters in
/// `config.adapt` change.
AdaptResult adapt(const net::Model& pretrained, const data::Dataset& dataset, std::span<const int> train_ids,
                  const TrainConfig& config);

/// Source-protocol EER of both models on `eval_ids`: (pretrained, adapted).
std::pair<double, double> retention_eval(const net::Model& pretrained, const net::Model& adapted,
                                         const data::Dataset& dataset, std::span<const int> eval_ids);

}  // namespace hfr::train
