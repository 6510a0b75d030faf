#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hfr/grad/graph.hpp"
#include "hfr/grad/tensor.hpp"

namespace hfr::net {

/// Parameter partition tag. The underlying value is the on-disk group byte.
enum class ParameterGroup : std::uint8_t { LN = 0, ST = 1, S0 = 2, S1 = 3, S2 = 4, HEAD = 5 };

inline constexpr std::array<ParameterGroup, 6> kAllGroups = {ParameterGroup::LN, ParameterGroup::ST,
                                                             ParameterGroup::S0, ParameterGroup::S1,
                                                             ParameterGroup::S2, ParameterGroup::HEAD};

std::string_view group_name(ParameterGroup group);
std::optional<ParameterGroup> parse_group(std::string_view name);

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct BackboneConfig {
    std::size_t input_channels = 3;
    std::size_t input_size = 32;
    std::size_t stem_kernel = 4;
    std::size_t stem_stride = 4;
    std::array<std::size_t, 3> stage_channels{8, 16, 32};
    std::array<std::size_t, 3> stage_depths{2, 2, 2};
    std::set<std::size_t> attention_stages{1, 2};
    std::size_t embed_dim = 32;
    double ln_epsilon = 1e-6;

    /// Throws ConfigError describing the first violated constraint.
    void validate() const;
    /// Spatial side length after the stem.
    std::size_t stem_output_size() const;

    bool operator==(const BackboneConfig&) const = default;
};

struct NamedParameter {
    std::string name;
    ParameterGroup group;
    grad::Tensor tensor;
    bool trainable = false;
};

/// Ordered parameter registry plus the configuration that fixes topology.
class Model {
public:
    Model() = default;
    Model(BackboneConfig config, std::vector<NamedParameter> params);

    const BackboneConfig& config() const noexcept { return config_; }
    std::vector<NamedParameter>& params() noexcept { return params_; }
    const std::vector<NamedParameter>& params() const noexcept { return params_; }

    const NamedParameter& at(std::string_view name) const;
    NamedParameter& at(std::string_view name);
    std::optional<std::size_t> index_of(std::string_view name) const;

    void zero_grads();

private:
    BackboneConfig config_;
    std::vector<NamedParameter> params_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Deterministic construction. Conv and linear tensors are drawn uniformly
/// from [-1/sqrt(fan_in), 1/sqrt(fan_in)]; LayerNorm gamma = 1, beta = 0.
/// Every parameter starts frozen (trainable = false).
Model build(const BackboneConfig& config, std::uint64_t seed);

/// Records the forward pass. Parameters flagged trainable become graph
/// parameters (gradients flow into their grad buffers); the rest are
/// constants. Returns raw N x embed_dim embeddings.
grad::Var forward(grad::Graph& graph, Model& model, grad::Var batch);

/// Forward with every parameter treated as a constant.
grad::Var forward(grad::Graph& graph, const Model& model, grad::Var batch);

/// Inference helper: embeds a N x C x S x S batch in chunks, no gradients.
grad::Tensor embed(const Model& model, const grad::Tensor& batch, std::size_t chunk = 64);

/// N x 1 x S x S -> N x 3 x S x S with bit-identical channels.
grad::Tensor replicate_channels(const grad::Tensor& image);

struct ParameterCount {
    std::size_t total = 0;
    std::map<ParameterGroup, std::size_t> per_group;
};

ParameterCount count_parameters(std::span<const NamedParameter> params);
ParameterCount count_parameters(const Model& model);

/// Number of LayerNorm layers (gamma/beta pairs) in the topology.
std::size_t count_layer_norms(const Model& model);

// Multiply-accumulate counts for one sample. LayerNorm, GELU, softmax and
// pooling are not counted.
std::uint64_t conv_macs(std::size_t out_ch, std::size_t in_ch, std::size_t kh, std::size_t kw, std::size_t out_h,
                        std::size_t out_w);
std::uint64_t depthwise_macs(std::size_t channels, std::size_t kh, std::size_t kw, std::size_t out_h,
                             std::size_t out_w);
std::uint64_t linear_macs(std::size_t dout, std::size_t din, std::size_t rows = 1);
/// Q, K, V and output projections (4 T D^2) plus scores and mixing (2 T^2 D).
std::uint64_t attention_macs(std::size_t tokens, std::size_t dim);

std::uint64_t estimate_flops(const BackboneConfig& config);
std::uint64_t estimate_flops(const Model& model);

}  // namespace hfr::net
