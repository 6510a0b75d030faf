#pragma once

#include <cstddef>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hfr/net/backbone.hpp"

namespace hfr::adapt {

class AdaptConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Which parameter groups are unfrozen. HEAD is never adaptable.
struct AdaptConfig {
    std::set<net::ParameterGroup> groups;

    /// Accepts "baseline", "" or a comma-separated list of LN, ST, S0, S1, S2.
    static AdaptConfig parse(std::string_view text);
    /// Canonical spelling, e.g. "LN,ST,S0"; "baseline" for the empty set.
    std::string to_string() const;

    bool contains(net::ParameterGroup g) const { return groups.contains(g); }
    bool operator==(const AdaptConfig&) const = default;
};

/// The named layer-set presets, in ablation-table order.
const std::vector<std::string>& preset_names();

/// Sizes of the three disjoint parameter subsets after partitioning.
struct PartitionReport {
    std::size_t n_ln_params = 0;
    std::size_t n_adapted_params = 0;
    std::size_t n_frozen_params = 0;
    /// Number of LayerNorm layers in the topology, whether or not adapted.
    std::size_t k_ln_layers = 0;
    std::vector<std::string> trainable_names;

    std::size_t total() const { return n_ln_params + n_adapted_params + n_frozen_params; }
    std::size_t trainable() const { return n_ln_params + n_adapted_params; }
    bool operator==(const PartitionReport&) const = default;
};

/// Flags exactly the parameters whose group is in `config` as trainable.
PartitionReport partition(net::Model& model, const AdaptConfig& config);

/// Report for the flags currently set on `model`.
PartitionReport describe(const net::Model& model);

struct FrozenCheck {
    bool ok = true;
    /// Names of frozen parameters whose bytes changed.
    std::vector<std::string> offending;

    explicit operator bool() const { return ok; }
};

/// True iff every parameter outside `config.groups` is bit-identical in the
/// two models. Throws std::invalid_argument on mismatched topology.
FrozenCheck verify_frozen(const net::Model& before, const net::Model& after, const AdaptConfig& config);

}  // namespace hfr::adapt
