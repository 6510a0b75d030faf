#include "hfr/eval/protocol.hpp"

#include <stdexcept>

namespace hfr::eval {

using data::Modality;
using data::SampleKey;

std::optional<Protocol> parse_protocol(std::string_view text) {
    if (text == "cross") return Protocol::Cross;
    if (text == "source") return Protocol::Source;
    return std::nullopt;
}

std::string_view protocol_name(Protocol p) { return p == Protocol::Cross ? "cross" : "source"; }

ProtocolSets protocol_sets(const data::Dataset& dataset, std::span<const int> ids, Protocol protocol) {
    if (ids.empty()) throw std::invalid_argument("protocol_sets: no identities");
    ProtocolSets sets;
    const std::size_t n = dataset.samples_per_id();
    const auto push = [](std::vector<SampleKey>& keys, std::vector<int>& labels, SampleKey k) {
        keys.push_back(k);
        labels.push_back(k.id);
    };
    if (protocol == Protocol::Cross) {
        for (const auto& k : dataset.keys_for(ids, Modality::Source)) push(sets.gallery, sets.gallery_labels, k);
        for (const auto& k : dataset.keys_for(ids, Modality::Target)) push(sets.probe, sets.probe_labels, k);
        return sets;
    }
    if (n < 2) throw std::invalid_argument("source protocol needs at least 2 samples per identity");
    for (const auto& k : dataset.keys_for(ids, Modality::Source)) {
        if (k.sample < n / 2) {
            push(sets.gallery, sets.gallery_labels, k);
        } else {
            push(sets.probe, sets.probe_labels, k);
        }
    }
    return sets;
}

metrics::EvalReport evaluate_protocol(const net::Model& model, const data::Dataset& dataset, std::span<const int> ids,
                                      Protocol protocol, std::span<const double> far_targets) {
    const ProtocolSets sets = protocol_sets(dataset, ids, protocol);
    const grad::Tensor g = net::embed(model, dataset.images(sets.gallery));
    const grad::Tensor p = net::embed(model, dataset.images(sets.probe));
    const auto matrix = metrics::score_matrix(g, sets.gallery_labels, p, sets.probe_labels);
    return metrics::evaluate(matrix, sets.gallery_labels, sets.probe_labels, far_targets);
}

}  // namespace hfr::eval
