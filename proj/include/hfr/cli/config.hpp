#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfr/net/backbone.hpp"
#include "hfr/train/trainer.hpp"

namespace hfr::cli {

struct DataSection {
    std::size_t n_ids = 100;
    std::size_t samples_per_id = 10;
    std::uint64_t dataset_seed = 42;
    double positive_fraction = 0.5;
    /// Identities in the separate source-only pretraining corpus.
    std::size_t pretrain_ids = 1000;

    bool operator==(const DataSection&) const = default;
};

struct TrainSection {
    double lambda = 0.75;
    double margin = 0.0;
    double lr = 2e-2;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::string adapt_layers = "LN,ST";
    train::Seeds seeds;
    std::size_t pretrain_epochs = 8;
    double pretrain_lr = 1e-3;

    bool operator==(const TrainSection&) const = default;
};

struct EvalSection {
    std::vector<double> far_targets{5e-2, 1e-2, 1e-3, 1e-4};
    std::size_t n_folds = 2;

    bool operator==(const EvalSection&) const = default;
};

/// Full run configuration. Missing keys keep their defaults; unknown keys and
/// ill-typed values raise net::ConfigError.
struct RunConfig {
    net::BackboneConfig backbone;
    DataSection data;
    TrainSection train;
    EvalSection eval;

    static RunConfig from_json(const nlohmann::json& doc);
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);

    nlohmann::ordered_json to_json() const;
    void validate() const;

    train::TrainConfig train_config() const;
    train::PretrainOptions pretrain_options() const;

    bool operator==(const RunConfig&) const = default;
};

}  // namespace hfr::cli
