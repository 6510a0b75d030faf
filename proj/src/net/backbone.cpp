#include "hfr/net/backbone.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "hfr/grad/ops.hpp"

namespace hfr::net {

using grad::Graph;
using grad::Shape;
using grad::Tensor;
using grad::Var;

std::string_view group_name(ParameterGroup group) {
    switch (group) {
        case ParameterGroup::LN: return "LN";
        case ParameterGroup::ST: return "ST";
        case ParameterGroup::S0: return "S0";
        case ParameterGroup::S1: return "S1";
        case ParameterGroup::S2: return "S2";
        case ParameterGroup::HEAD: return "HEAD";
    }
    return "?";
}

std::optional<ParameterGroup> parse_group(std::string_view name) {
    for (auto g : kAllGroups) {
        if (group_name(g) == name) return g;
    }
    return std::nullopt;
}

std::size_t BackboneConfig::stem_output_size() const {
    return (input_size - stem_kernel) / stem_stride + 1;
}

void BackboneConfig::validate() const {
    if (input_channels < 1) throw ConfigError("backbone: input_channels must be >= 1");
    if (stem_stride < 1 || stem_kernel < 1) throw ConfigError("backbone: stem kernel and stride must be >= 1");
    if (input_size < stem_kernel) throw ConfigError("backbone: input_size smaller than stem kernel");
    if ((input_size - stem_kernel) % stem_stride != 0) {
        throw ConfigError("backbone: input_size " + std::to_string(input_size) + " not tiled by stem kernel " +
                          std::to_string(stem_kernel) + " / stride " + std::to_string(stem_stride));
    }
    // Two stride-2 downsamples follow the stem.
    if (stem_output_size() % 4 != 0) {
        throw ConfigError("backbone: stem output " + std::to_string(stem_output_size()) +
                          " must be divisible by 4 (two stride-2 downsamples)");
    }
    for (auto c : stage_channels) {
        if (c < 1) throw ConfigError("backbone: stage_channels must be >= 1");
    }
    for (auto s : attention_stages) {
        if (s > 2) throw ConfigError("backbone: attention stage index " + std::to_string(s) + " out of range");
    }
    if (embed_dim < 2) throw ConfigError("backbone: embed_dim must be >= 2");
    if (!(ln_epsilon > 0.0)) throw ConfigError("backbone: ln_epsilon must be > 0");
}

Model::Model(BackboneConfig config, std::vector<NamedParameter> params)
    : config_(std::move(config)), params_(std::move(params)) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!index_.emplace(params_[i].name, i).second) {
            throw std::invalid_argument("Model: duplicate parameter name " + params_[i].name);
        }
    }
}

const NamedParameter& Model::at(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("Model: no parameter named " + std::string(name));
    return params_[it->second];
}

NamedParameter& Model::at(std::string_view name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("Model: no parameter named " + std::string(name));
    return params_[it->second];
}

std::optional<std::size_t> Model::index_of(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void Model::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

namespace {

enum class Init { Uniform, Ones, Zeros };

struct Slot {
    std::string name;
    ParameterGroup group;
    Shape shape;
    Init init;
    std::size_t fan_in;
};

std::string stage_prefix(std::size_t s) {
    return "stages." + std::to_string(s) + ".";
}

ParameterGroup stage_group(std::size_t s) {
    return s == 0 ? ParameterGroup::S0 : (s == 1 ? ParameterGroup::S1 : ParameterGroup::S2);
}

void add_norm(std::vector<Slot>& out, const std::string& prefix, std::size_t dim) {
    out.push_back({prefix + "gamma", ParameterGroup::LN, {dim}, Init::Ones, 0});
    out.push_back({prefix + "beta", ParameterGroup::LN, {dim}, Init::Zeros, 0});
}

void add_affine(std::vector<Slot>& out, const std::string& prefix, ParameterGroup group, Shape wshape,
                std::size_t bias_dim, std::size_t fan_in) {
    out.push_back({prefix + "weight", group, std::move(wshape), Init::Uniform, fan_in});
    out.push_back({prefix + "bias", group, {bias_dim}, Init::Uniform, fan_in});
}

// Parameter layout in registration order.
std::vector<Slot> layout(const BackboneConfig& cfg) {
    std::vector<Slot> slots;
    const auto& ch = cfg.stage_channels;
    const std::size_t k = cfg.stem_kernel;
    add_affine(slots, "stem.conv.", ParameterGroup::ST, {ch[0], cfg.input_channels, k, k}, ch[0],
               cfg.input_channels * k * k);
    add_norm(slots, "stem.norm.", ch[0]);

    for (std::size_t s = 0; s < 3; ++s) {
        const std::string sp = stage_prefix(s);
        const ParameterGroup grp = stage_group(s);
        const std::size_t c = ch[s];
        if (s > 0) {
            add_affine(slots, sp + "down.conv.", grp, {c, ch[s - 1], 2, 2}, c, ch[s - 1] * 4);
            add_norm(slots, sp + "down.norm.", c);
        }
        for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) {
            const std::string bp = sp + "blocks." + std::to_string(b) + ".";
            add_affine(slots, bp + "dw.", grp, {c, 1, 3, 3}, c, 9);
            add_norm(slots, bp + "norm.", c);
            add_affine(slots, bp + "pw1.", grp, {2 * c, c}, 2 * c, c);
            add_affine(slots, bp + "pw2.", grp, {c, 2 * c}, c, 2 * c);
        }
        if (cfg.attention_stages.contains(s)) {
            const std::string ap = sp + "attn.";
            add_norm(slots, ap + "norm.", c);
            for (const char* w : {"wq", "wk", "wv", "wo"}) {
                slots.push_back({ap + w, grp, {c, c}, Init::Uniform, c});
            }
        }
    }

    add_norm(slots, "head.norm.", ch[2]);
    add_affine(slots, "head.fc.", ParameterGroup::HEAD, {cfg.embed_dim, ch[2]}, cfg.embed_dim, ch[2]);
    return slots;
}

using Binder = std::function<Var(const std::string&)>;

// LayerNorm over the channel axis of an NCHW map.
Var channel_norm(Var x, Var gamma, Var beta, double eps) {
    return grad::to_channels_first(grad::layer_norm(grad::to_channels_last(x), gamma, beta, eps));
}

Var forward_impl(const BackboneConfig& cfg, const Binder& p, Var x) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw grad::DimensionError("forward", "rank", "batch must be N x C x S x S");
    if (xs[1] != cfg.input_channels) {
        throw grad::DimensionError("forward", "channels",
                                   "expected " + std::to_string(cfg.input_channels) + ", got " + std::to_string(xs[1]));
    }
    if (xs[2] != cfg.input_size || xs[3] != cfg.input_size) {
        throw grad::DimensionError("forward", "spatial",
                                   "expected " + std::to_string(cfg.input_size) + ", got " + grad::shape_to_string(xs));
    }
    const double eps = cfg.ln_epsilon;

    Var h = grad::conv2d(x, p("stem.conv.weight"), p("stem.conv.bias"), cfg.stem_stride, 0);
    h = channel_norm(h, p("stem.norm.gamma"), p("stem.norm.beta"), eps);

    for (std::size_t s = 0; s < 3; ++s) {
        const std::string sp = stage_prefix(s);
        if (s > 0) {
            h = grad::conv2d(h, p(sp + "down.conv.weight"), p(sp + "down.conv.bias"), 2, 0);
            h = channel_norm(h, p(sp + "down.norm.gamma"), p(sp + "down.norm.beta"), eps);
        }
        for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) {
            const std::string bp = sp + "blocks." + std::to_string(b) + ".";
            Var t = grad::depthwise_conv2d(h, p(bp + "dw.weight"), p(bp + "dw.bias"), 1);
            t = grad::to_channels_last(t);
            t = grad::layer_norm(t, p(bp + "norm.gamma"), p(bp + "norm.beta"), eps);
            t = grad::linear(t, p(bp + "pw1.weight"), p(bp + "pw1.bias"));
            t = grad::gelu(t);
            t = grad::linear(t, p(bp + "pw2.weight"), p(bp + "pw2.bias"));
            h = grad::add(h, grad::to_channels_first(t));
        }
        if (cfg.attention_stages.contains(s)) {
            const std::string ap = sp + "attn.";
            const Shape nhwc{h.shape()[0], h.shape()[2], h.shape()[3], h.shape()[1]};
            Var t = grad::reshape(grad::to_channels_last(h), {nhwc[0], nhwc[1] * nhwc[2], nhwc[3]});
            Var u = grad::layer_norm(t, p(ap + "norm.gamma"), p(ap + "norm.beta"), eps);
            u = grad::attention(u, p(ap + "wq"), p(ap + "wk"), p(ap + "wv"), p(ap + "wo"));
            t = grad::add(t, u);
            h = grad::to_channels_first(grad::reshape(t, nhwc));
        }
    }

    Var pooled = grad::global_avg_pool(h);
    pooled = grad::layer_norm(pooled, p("head.norm.gamma"), p("head.norm.beta"), eps);
    return grad::linear(pooled, p("head.fc.weight"), p("head.fc.bias"));
}

}  // namespace

Model build(const BackboneConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::vector<NamedParameter> params;
    for (auto& slot : layout(config)) {
        Tensor t(slot.shape);
        switch (slot.init) {
            case Init::Ones: std::fill(t.data().begin(), t.data().end(), 1.0); break;
            case Init::Zeros: break;
            case Init::Uniform: {
                const double bound = 1.0 / std::sqrt(static_cast<double>(slot.fan_in));
                std::uniform_real_distribution<double> dist(-bound, bound);
                for (auto& v : t.data()) v = dist(rng);
                break;
            }
        }
        params.push_back(NamedParameter{std::move(slot.name), slot.group, std::move(t), false});
    }
    return Model(config, std::move(params));
}

Var forward(Graph& graph, Model& model, Var batch) {
    auto bind = [&](const std::string& name) {
        auto& p = model.at(name);
        if (p.trainable) return graph.parameter(p.tensor);
        return graph.constant(Tensor(p.tensor.shape(), p.tensor.values()));
    };
    return forward_impl(model.config(), bind, batch);
}

Var forward(Graph& graph, const Model& model, Var batch) {
    auto bind = [&](const std::string& name) {
        const auto& p = model.at(name);
        return graph.constant(Tensor(p.tensor.shape(), p.tensor.values()));
    };
    return forward_impl(model.config(), bind, batch);
}

Tensor embed(const Model& model, const Tensor& batch, std::size_t chunk) {
    if (batch.rank() != 4) throw grad::DimensionError("embed", "rank", "batch must be N x C x S x S");
    const std::size_t n = batch.dim(0);
    const std::size_t per = batch.numel() / n;
    const std::size_t d = model.config().embed_dim;
    Tensor out(Shape{n, d});
    chunk = std::max<std::size_t>(chunk, 1);
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t m = std::min(chunk, n - start);
        std::vector<double> slice(batch.data().begin() + static_cast<std::ptrdiff_t>(start * per),
                                  batch.data().begin() + static_cast<std::ptrdiff_t>((start + m) * per));
        Graph g;
        Var x = g.constant(Tensor(Shape{m, batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(slice)));
        const Var e = forward(g, model, x);
        std::copy(e.value().data().begin(), e.value().data().end(), out.data().begin() + start * d);
    }
    return out;
}

Tensor replicate_channels(const Tensor& image) {
    if (image.rank() != 4 || image.dim(1) != 1) {
        throw grad::DimensionError("replicate_channels", "channels",
                                   "expected N x 1 x S x S, got " + grad::shape_to_string(image.shape()));
    }
    const std::size_t n = image.dim(0), plane = image.dim(2) * image.dim(3);
    Tensor out(Shape{n, 3, image.dim(2), image.dim(3)});
    for (std::size_t i = 0; i < n; ++i) {
        const auto src = image.data().subspan(i * plane, plane);
        for (std::size_t c = 0; c < 3; ++c) {
            std::copy(src.begin(), src.end(), out.data().begin() + (i * 3 + c) * plane);
        }
    }
    return out;
}

ParameterCount count_parameters(std::span<const NamedParameter> params) {
    ParameterCount count;
    for (auto g : kAllGroups) count.per_group[g] = 0;
    for (const auto& p : params) {
        count.per_group[p.group] += p.tensor.numel();
        count.total += p.tensor.numel();
    }
    return count;
}

ParameterCount count_parameters(const Model& model) {
    return count_parameters(model.params());
}

std::size_t count_layer_norms(const Model& model) {
    std::size_t k = 0;
    for (const auto& p : model.params()) {
        if (p.group == ParameterGroup::LN && p.name.ends_with(".gamma")) ++k;
    }
    return k;
}

std::uint64_t conv_macs(std::size_t out_ch, std::size_t in_ch, std::size_t kh, std::size_t kw, std::size_t out_h,
                        std::size_t out_w) {
    return std::uint64_t{out_ch} * in_ch * kh * kw * out_h * out_w;
}

std::uint64_t depthwise_macs(std::size_t channels, std::size_t kh, std::size_t kw, std::size_t out_h,
                             std::size_t out_w) {
    return std::uint64_t{channels} * kh * kw * out_h * out_w;
}

std::uint64_t linear_macs(std::size_t dout, std::size_t din, std::size_t rows) {
    return std::uint64_t{dout} * din * rows;
}

std::uint64_t attention_macs(std::size_t tokens, std::size_t dim) {
    return 4 * std::uint64_t{tokens} * dim * dim + 2 * std::uint64_t{tokens} * tokens * dim;
}

std::uint64_t estimate_flops(const BackboneConfig& cfg) {
    cfg.validate();
    const auto& ch = cfg.stage_channels;
    std::size_t side = cfg.stem_output_size();
    std::uint64_t macs = conv_macs(ch[0], cfg.input_channels, cfg.stem_kernel, cfg.stem_kernel, side, side);
    for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t c = ch[s];
        if (s > 0) {
            side /= 2;
            macs += conv_macs(c, ch[s - 1], 2, 2, side, side);
        }
        const std::size_t positions = side * side;
        for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) {
            macs += depthwise_macs(c, 3, 3, side, side);
            macs += linear_macs(2 * c, c, positions);
            macs += linear_macs(c, 2 * c, positions);
        }
        if (cfg.attention_stages.contains(s)) macs += attention_macs(positions, c);
    }
    macs += linear_macs(cfg.embed_dim, ch[2]);
    return macs;
}

std::uint64_t estimate_flops(const Model& model) {
    return estimate_flops(model.config());
}

}  // namespace hfr::net
