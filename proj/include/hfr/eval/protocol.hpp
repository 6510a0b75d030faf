#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hfr/data/syndata.hpp"
#include "hfr/metrics/metrics.hpp"
#include "hfr/net/backbone.hpp"

namespace hfr::eval {

/// Cross: source gallery against target probes. Source: the first half of
/// each identity's source samples against the second half.
enum class Protocol { Cross, Source };

std::optional<Protocol> parse_protocol(std::string_view text);
std::string_view protocol_name(Protocol p);

struct ProtocolSets {
    std::vector<data::SampleKey> gallery;
    std::vector<data::SampleKey> probe;
    std::vector<int> gallery_labels;
    std::vector<int> probe_labels;
};

ProtocolSets protocol_sets(const data::Dataset& dataset, std::span<const int> ids, Protocol protocol);

metrics::EvalReport evaluate_protocol(const net::Model& model, const data::Dataset& dataset, std::span<const int> ids,
                                      Protocol protocol,
                                      std::span<const double> far_targets = metrics::default_far_targets());

}  // namespace hfr::eval
