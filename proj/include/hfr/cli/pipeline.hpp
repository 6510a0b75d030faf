#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "hfr/cli/config.hpp"
#include "hfr/data/syndata.hpp"
#include "hfr/eval/protocol.hpp"
#include "hfr/metrics/metrics.hpp"
#include "hfr/train/trainer.hpp"

// Glue between the configuration and the training/evaluation modules, shared
// by the command-line tool and the end-to-end tests.
namespace hfr::cli {

/// Two-modality benchmark the folds are drawn from.
data::Dataset benchmark_dataset(const RunConfig& config);

/// Source-only pretraining corpus; its identities are disjoint from the
/// benchmark's because it is rendered from a derived seed.
data::Dataset pretrain_dataset(const RunConfig& config);

data::ProtocolSplit folds(const RunConfig& config);

/// Pretrains on the source corpus and rounds the weights to float32 so the
/// in-memory model equals what a weights file stores.
net::Model pretrain(const RunConfig& config);

/// Adapts on the training identities of one fold; weights are rounded to
/// float32 like pretrain().
train::AdaptResult adapt_fold(const net::Model& pretrained, const data::Dataset& dataset,
                              const data::ProtocolSplit& split, std::size_t fold, const train::TrainConfig& config);

/// Evaluates on the held-out identities of one fold, or of every fold when
/// `fold` is empty, and aggregates.
metrics::FoldSummary evaluate(const net::Model& model, const data::Dataset& dataset,
                              const data::ProtocolSplit& split, eval::Protocol protocol,
                              const std::vector<double>& far_targets, std::optional<std::size_t> fold = std::nullopt);

}  // namespace hfr::cli
