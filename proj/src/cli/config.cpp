#include "hfr/cli/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "hfr/adapt/partition.hpp"

namespace hfr::cli {

using net::ConfigError;
using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, unused] : obj.items()) {
        if (!allowed.contains(key)) {
            std::string list;
            for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
            throw ConfigError(where + ": unknown key '" + key + "' (allowed: " + list + ")");
        }
    }
}

std::string path_of(const std::string& where, const std::string& key) { return where + "." + key; }

template <typename T>
void read(const json& obj, const std::string& where, const char* key, T& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    const std::string at = path_of(where, key);
    if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(at + ": expected a number");
        out = v.get<double>();
        if (!std::isfinite(out)) throw ConfigError(at + ": must be finite");
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(at + ": expected a string");
        out = v.get<std::string>();
    } else {
        if (!v.is_number_unsigned()) throw ConfigError(at + ": expected a non-negative integer");
        out = v.get<T>();
    }
}

template <std::size_t N>
void read_array(const json& obj, const std::string& where, const char* key, std::array<std::size_t, N>& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    const std::string at = path_of(where, key);
    if (!v.is_array() || v.size() != N) throw ConfigError(at + ": expected an array of " + std::to_string(N));
    for (std::size_t i = 0; i < N; ++i) {
        if (!v[i].is_number_unsigned()) throw ConfigError(at + ": expected non-negative integers");
        out[i] = v[i].get<std::size_t>();
    }
}

}  // namespace

RunConfig RunConfig::from_json(const json& doc) {
    RunConfig c;
    reject_unknown(doc, "config", {"backbone", "data", "train", "eval"});
    if (doc.contains("backbone")) {
        const json& b = doc.at("backbone");
        reject_unknown(b, "backbone", {"channels", "depths", "embed_dim", "input_size", "attention_stages"});
        read_array(b, "backbone", "channels", c.backbone.stage_channels);
        read_array(b, "backbone", "depths", c.backbone.stage_depths);
        read(b, "backbone", "embed_dim", c.backbone.embed_dim);
        read(b, "backbone", "input_size", c.backbone.input_size);
        if (b.contains("attention_stages")) {
            const json& a = b.at("attention_stages");
            if (!a.is_array()) throw ConfigError("backbone.attention_stages: expected an array");
            c.backbone.attention_stages.clear();
            for (const auto& s : a) {
                if (!s.is_number_unsigned()) throw ConfigError("backbone.attention_stages: expected stage indices");
                c.backbone.attention_stages.insert(s.get<std::size_t>());
            }
        }
    }
    if (doc.contains("data")) {
        const json& d = doc.at("data");
        reject_unknown(d, "data", {"n_ids", "samples_per_id", "dataset_seed", "positive_fraction", "pretrain_ids"});
        read(d, "data", "n_ids", c.data.n_ids);
        read(d, "data", "samples_per_id", c.data.samples_per_id);
        read(d, "data", "dataset_seed", c.data.dataset_seed);
        read(d, "data", "positive_fraction", c.data.positive_fraction);
        read(d, "data", "pretrain_ids", c.data.pretrain_ids);
    }
    if (doc.contains("train")) {
        const json& t = doc.at("train");
        reject_unknown(t, "train",
                       {"lambda", "margin", "lr", "epochs", "batch_size", "adapt_layers", "seeds", "pretrain_epochs",
                        "pretrain_lr"});
        read(t, "train", "lambda", c.train.lambda);
        read(t, "train", "margin", c.train.margin);
        read(t, "train", "lr", c.train.lr);
        read(t, "train", "epochs", c.train.epochs);
        read(t, "train", "batch_size", c.train.batch_size);
        read(t, "train", "adapt_layers", c.train.adapt_layers);
        read(t, "train", "pretrain_epochs", c.train.pretrain_epochs);
        read(t, "train", "pretrain_lr", c.train.pretrain_lr);
        if (t.contains("seeds")) {
            const json& s = t.at("seeds");
            reject_unknown(s, "train.seeds", {"data", "init", "sampler"});
            read(s, "train.seeds", "data", c.train.seeds.data);
            read(s, "train.seeds", "init", c.train.seeds.init);
            read(s, "train.seeds", "sampler", c.train.seeds.sampler);
        }
    }
    if (doc.contains("eval")) {
        const json& e = doc.at("eval");
        reject_unknown(e, "eval", {"far_targets", "n_folds"});
        read(e, "eval", "n_folds", c.eval.n_folds);
        if (e.contains("far_targets")) {
            const json& f = e.at("far_targets");
            if (!f.is_array()) throw ConfigError("eval.far_targets: expected an array");
            c.eval.far_targets.clear();
            for (const auto& v : f) {
                if (!v.is_number()) throw ConfigError("eval.far_targets: expected numbers");
                c.eval.far_targets.push_back(v.get<double>());
            }
        }
    }
    c.validate();
    return c;
}

RunConfig RunConfig::parse(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
    }
    return from_json(doc);
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["backbone"] = {{"channels", backbone.stage_channels},
                     {"depths", backbone.stage_depths},
                     {"embed_dim", backbone.embed_dim},
                     {"input_size", backbone.input_size},
                     {"attention_stages", backbone.attention_stages}};
    j["data"] = {{"n_ids", data.n_ids},
                 {"samples_per_id", data.samples_per_id},
                 {"dataset_seed", data.dataset_seed},
                 {"positive_fraction", data.positive_fraction},
                 {"pretrain_ids", data.pretrain_ids}};
    j["train"] = {{"lambda", train.lambda},
                  {"margin", train.margin},
                  {"lr", train.lr},
                  {"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"adapt_layers", train.adapt_layers},
                  {"seeds", {{"data", train.seeds.data}, {"init", train.seeds.init}, {"sampler", train.seeds.sampler}}},
                  {"pretrain_epochs", train.pretrain_epochs},
                  {"pretrain_lr", train.pretrain_lr}};
    j["eval"] = {{"far_targets", eval.far_targets}, {"n_folds", eval.n_folds}};
    return j;
}

void RunConfig::validate() const {
    backbone.validate();
    if (backbone.input_channels != 3) throw ConfigError("backbone: input must have 3 channels");
    if (data.n_ids < 2) throw ConfigError("data.n_ids must be at least 2");
    if (data.samples_per_id < 2) throw ConfigError("data.samples_per_id must be at least 2");
    if (data.pretrain_ids < 2) throw ConfigError("data.pretrain_ids must be at least 2");
    if (!(data.positive_fraction > 0.0 && data.positive_fraction < 1.0)) {
        throw ConfigError("data.positive_fraction must lie in (0, 1)");
    }
    if (eval.n_folds < 1) throw ConfigError("eval.n_folds must be at least 1");
    if (data.n_ids < 2 * eval.n_folds) throw ConfigError("data.n_ids must be at least 2 * eval.n_folds");
    for (double f : eval.far_targets) {
        if (!(f > 0.0 && f < 1.0)) throw ConfigError("eval.far_targets must lie in (0, 1)");
    }
    if (!(train.pretrain_lr > 0.0)) throw ConfigError("train.pretrain_lr must be positive");
    if (train.batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
    try {
        train_config().validate();
    } catch (const adapt::AdaptConfigError& e) {
        throw ConfigError(std::string("train.adapt_layers: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
}

train::TrainConfig RunConfig::train_config() const {
    train::TrainConfig t;
    t.lambda = train.lambda;
    t.margin = train.margin;
    t.lr = train.lr;
    t.epochs = train.epochs;
    t.batch_size = train.batch_size;
    t.adapt = adapt::AdaptConfig::parse(train.adapt_layers);
    t.seeds = train.seeds;
    t.positive_fraction = data.positive_fraction;
    return t;
}

train::PretrainOptions RunConfig::pretrain_options() const {
    train::PretrainOptions p;
    p.epochs = train.pretrain_epochs;
    p.batch_size = train.batch_size;
    p.lr = train.pretrain_lr;
    p.margin = train.margin;
    p.positive_fraction = data.positive_fraction;
    p.init_seed = train.seeds.init;
    p.sampler_seed = train.seeds.sampler;
    return p;
}

}  // namespace hfr::cli
