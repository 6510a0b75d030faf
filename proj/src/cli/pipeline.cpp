#include "hfr/cli/pipeline.hpp"

#include <numeric>
#include <stdexcept>

#include "hfr/cli/weights.hpp"

namespace hfr::cli {

namespace {

constexpr std::uint64_t kPretrainCorpusStream = 0x505245545241494eULL;

}  // namespace

data::Dataset benchmark_dataset(const RunConfig& config) {
    return data::Dataset(config.data.n_ids, config.data.samples_per_id, config.data.dataset_seed,
                         config.backbone.input_size);
}

data::Dataset pretrain_dataset(const RunConfig& config) {
    return data::Dataset(config.data.pretrain_ids, config.data.samples_per_id,
                         data::mix_seed(config.data.dataset_seed, kPretrainCorpusStream), config.backbone.input_size);
}

data::ProtocolSplit folds(const RunConfig& config) {
    return data::make_folds(config.data.n_ids, config.eval.n_folds, config.train.seeds.data);
}

net::Model pretrain(const RunConfig& config) {
    const data::Dataset corpus = pretrain_dataset(config);
    std::vector<int> ids(corpus.n_ids());
    std::iota(ids.begin(), ids.end(), 0);
    net::Model model = train::pretrain_source(config.backbone, corpus, ids, config.pretrain_options()).model;
    round_to_float32(model);
    return model;
}

train::AdaptResult adapt_fold(const net::Model& pretrained, const data::Dataset& dataset,
                              const data::ProtocolSplit& split, std::size_t fold, const train::TrainConfig& config) {
    if (fold >= split.folds.size()) {
        throw std::out_of_range("fold " + std::to_string(fold) + " out of range (" +
                                std::to_string(split.folds.size()) + " folds)");
    }
    train::AdaptResult result = train::adapt(pretrained, dataset, split.folds[fold].train_ids, config);
    round_to_float32(result.model);
    return result;
}

metrics::FoldSummary evaluate(const net::Model& model, const data::Dataset& dataset,
                              const data::ProtocolSplit& split, eval::Protocol protocol,
                              const std::vector<double>& far_targets, std::optional<std::size_t> fold) {
    std::vector<metrics::EvalReport> reports;
    for (std::size_t k = 0; k < split.folds.size(); ++k) {
        if (fold && *fold != k) continue;
        reports.push_back(eval::evaluate_protocol(model, dataset, split.folds[k].eval_ids, protocol, far_targets));
    }
    if (reports.empty()) throw std::out_of_range("fold " + std::to_string(*fold) + " out of range");
    return metrics::aggregate_folds(reports);
}

}  // namespace hfr::cli
