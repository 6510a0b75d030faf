#include "hfr/adapt/partition.hpp"

#include <cstring>

namespace hfr::adapt {

using net::ParameterGroup;

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

std::string presets_listing() {
    std::string out;
    for (const auto& p : preset_names()) {
        if (!out.empty()) out += "; ";
        out += '"' + p + '"';
    }
    return out;
}

}  // namespace

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"baseline", "LN",          "ST",
                                                   "LN,ST",    "LN,ST,S0",    "LN,ST,S0,S1",
                                                   "LN,ST,S0,S1,S2"};
    return names;
}

AdaptConfig AdaptConfig::parse(std::string_view text) {
    AdaptConfig cfg;
    text = trim(text);
    if (text.empty() || text == "baseline") return cfg;
    while (true) {
        const auto comma = text.find(',');
        const std::string_view token = trim(text.substr(0, comma));
        const auto group = net::parse_group(token);
        if (!group || *group == ParameterGroup::HEAD) {
            throw AdaptConfigError("unknown layer token '" + std::string(token) +
                                   "'; valid presets: " + presets_listing());
        }
        cfg.groups.insert(*group);
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return cfg;
}

std::string AdaptConfig::to_string() const {
    if (groups.empty()) return "baseline";
    std::string out;
    for (auto g : groups) {
        if (!out.empty()) out += ',';
        out += net::group_name(g);
    }
    return out;
}

PartitionReport partition(net::Model& model, const AdaptConfig& config) {
    if (config.contains(ParameterGroup::HEAD)) throw AdaptConfigError("HEAD group cannot be adapted");
    for (auto& p : model.params()) {
        p.trainable = config.contains(p.group);
        if (!p.trainable) p.tensor.drop_grad();
    }
    return describe(model);
}

PartitionReport describe(const net::Model& model) {
    PartitionReport report;
    report.k_ln_layers = net::count_layer_norms(model);
    for (const auto& p : model.params()) {
        const std::size_t n = p.tensor.numel();
        if (!p.trainable) {
            report.n_frozen_params += n;
        } else if (p.group == ParameterGroup::LN) {
            report.n_ln_params += n;
            report.trainable_names.push_back(p.name);
        } else {
            report.n_adapted_params += n;
            report.trainable_names.push_back(p.name);
        }
    }
    return report;
}

FrozenCheck verify_frozen(const net::Model& before, const net::Model& after, const AdaptConfig& config) {
    const auto& a = before.params();
    const auto& b = after.params();
    if (a.size() != b.size()) throw std::invalid_argument("verify_frozen: parameter count differs");
    FrozenCheck check;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].group != b[i].group || a[i].tensor.shape() != b[i].tensor.shape()) {
            throw std::invalid_argument("verify_frozen: topology mismatch at " + a[i].name + " / " + b[i].name);
        }
        if (config.contains(a[i].group)) continue;
        const auto x = a[i].tensor.data();
        const auto y = b[i].tensor.data();
        if (std::memcmp(x.data(), y.data(), x.size_bytes()) != 0) {
            check.ok = false;
            check.offending.push_back(a[i].name);
        }
    }
    return check;
}

}  // namespace hfr::adapt
