#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hfr/adapt/partition.hpp"
#include "hfr/cli/commands.hpp"
#include "hfr/cli/config.hpp"
#include "hfr/cli/gradcheck_suite.hpp"
#include "hfr/cli/weights.hpp"
#include "hfr/grad/ops.hpp"
#include "hfr/net/backbone.hpp"

namespace fs = std::filesystem;
using namespace hfr::cli;
using hfr::net::ConfigError;

namespace {

constexpr const char* kSmallConfig = R"({
  "data": {"n_ids": 8, "samples_per_id": 2, "pretrain_ids": 8},
  "train": {"epochs": 1, "batch_size": 4, "pretrain_epochs": 1, "lr": 0.01},
  "eval": {"n_folds": 2}
})";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

struct Workdir {
    fs::path dir;
    explicit Workdir(const std::string& name) : dir(fs::temp_directory_path() / name) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workdir() { fs::remove_all(dir); }
    fs::path operator/(const std::string& f) const { return dir / f; }
};

struct Captured {
    std::ostringstream out, err;
    Streams io() { return {out, err}; }
};

int run_binary(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(HFR_ADAPT_BIN) + " " + args + " > \"" + log.string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("run config parsing") {
    const RunConfig defaults;
    CHECK(RunConfig::parse("{}") == defaults);
    CHECK(RunConfig::from_json(nlohmann::json::parse(defaults.to_json().dump())) == defaults);

    const RunConfig c = RunConfig::parse(R"({"train": {"lambda": 0.5, "adapt_layers": "LN"}, "eval": {"n_folds": 3}})");
    CHECK(c.train.lambda == 0.5);
    CHECK(c.train_config().adapt == hfr::adapt::AdaptConfig::parse("LN"));
    CHECK(c.eval.n_folds == 3);

    CHECK_THROWS_AS(RunConfig::parse(R"({"trian": {}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"train": {"lamda": 0.5}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"train": {"seeds": {"dat": 1}}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"train": {"lambda": "high"}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"train": {"lambda": 1.5}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"train": {"adapt_layers": "LN,HEAD"}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"backbone": {"input_size": 30}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse(R"({"data": {"n_ids": 3}, "eval": {"n_folds": 2}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("{ not json"), ConfigError);

    try {
        RunConfig::parse(R"({"data": {"ids": 3}})");
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("n_ids") != std::string::npos);
    }
}

TEST_CASE("print defaults round-trips") {
    Captured c;
    CHECK(cmd_print_defaults(c.io()) == kOk);
    CHECK(RunConfig::parse(c.out.str()) == RunConfig{});
}

TEST_CASE("weights serialization") {
    hfr::net::Model model = hfr::net::build(hfr::net::BackboneConfig{}, 4);
    const auto bytes = serialize(model);
    REQUIRE(bytes.size() > 12);
    CHECK(std::equal(bytes.begin(), bytes.begin() + 4, kWeightsMagic));

    const hfr::net::Model back = deserialize(bytes, model.config());
    hfr::net::Model rounded = model;
    round_to_float32(rounded);
    REQUIRE(back.params().size() == model.params().size());
    for (std::size_t i = 0; i < back.params().size(); ++i) {
        const auto& a = back.params()[i];
        const auto& b = rounded.params()[i];
        CHECK(a.name == b.name);
        CHECK(a.group == b.group);
        CHECK(a.tensor.shape() == b.tensor.shape());
        CHECK(a.tensor.values() == b.tensor.values());
        for (std::size_t k = 0; k < a.tensor.numel(); ++k) {
            CHECK(std::abs(a.tensor[k] - model.params()[i].tensor[k]) <= 1e-7 * std::max(1.0, std::abs(b.tensor[k])));
        }
    }
    CHECK(serialize(back) == bytes);
    CHECK(hfr::net::count_parameters(back).total == hfr::net::count_parameters(model).total);

    auto bad = bytes;
    bad[0] = 'Y';
    CHECK_THROWS_AS(deserialize(bad, model.config()), WeightsError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(deserialize(truncated, model.config()), WeightsError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(deserialize(trailing, model.config()), WeightsError);
    hfr::net::BackboneConfig other;
    other.embed_dim = 16;
    CHECK_THROWS_AS(deserialize(bytes, other), WeightsError);

    Workdir w("hfr_weights_test");
    save_weights(model, w / "m.bin");
    CHECK(load_weights(w / "m.bin", model.config()).params()[3].tensor.values() == back.params()[3].tensor.values());
    CHECK_THROWS_AS(load_weights(w / "missing.bin", model.config()), WeightsError);
}

TEST_CASE("gradcheck harness") {
    const auto& cases = gradcheck_cases();
    CHECK(cases.size() >= 20);

    const auto inputs = [](std::uint64_t seed) {
        hfr::grad::Tensor t(hfr::grad::Shape{5});
        for (std::size_t i = 0; i < 5; ++i) t[i] = 0.1 * static_cast<double>(i + seed % 3) - 0.2;
        return std::vector<hfr::grad::Tensor>{t};
    };
    const GradcheckCase good = op_case("gelu-only", inputs, [](hfr::grad::Graph&, std::span<const hfr::grad::Var> v,
                                                                std::uint64_t) { return hfr::grad::sum(hfr::grad::gelu(v[0])); });
    // Backward that reports half the true derivative of 2x.
    const GradcheckCase broken = op_case(
        "corrupted-double", inputs, [](hfr::grad::Graph& g, std::span<const hfr::grad::Var> v, std::uint64_t) {
            hfr::grad::Tensor y = v[0].value();
            for (auto& x : y.data()) x *= 2.0;
            const auto out = g.record(std::move(y), {v[0]}, [](hfr::grad::Graph& gr, std::size_t self) {
                const auto dy = gr.out_grad(self);
                auto dx = gr.in_grad(self, 0);
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
            });
            return hfr::grad::sum(out);
        });
    std::ostringstream out;
    CHECK(run_gradcheck(std::vector<GradcheckCase>{good}, out, 3) == kOk);
    CHECK(run_gradcheck(std::vector<GradcheckCase>{good, broken}, out, 3) == kGradcheckFailed);
    CHECK(out.str().find("corrupted-double") != std::string::npos);
}

TEST_CASE("layer sweep splitting") {
    CHECK(split_layer_sweep("baseline;LN;LN,ST") == std::vector<std::string>{"baseline", "LN", "LN,ST"});
    CHECK(split_layer_sweep("LN") == std::vector<std::string>{"LN"});
}

TEST_CASE("complexity command") {
    Captured c;
    CHECK(cmd_complexity({}, c.io()) == kOk);
    const auto j = nlohmann::json::parse(c.out.str());
    CHECK(j["params_total"] == 21880);
    CHECK(j["macs_per_sample"] == 198400);
    CHECK(j["params_per_group"]["LN"] == 496);
}

TEST_CASE("end-to-end commands on a small config") {
    Workdir w("hfr_cli_e2e");
    write(w / "cfg.json", kSmallConfig);
    const auto cfg = w / "cfg.json";
    Captured c;

    REQUIRE(cmd_pretrain({cfg, w / "pre.bin"}, c.io()) == kOk);
    REQUIRE(fs::exists(w / "pre.bin"));
    CHECK(slurp(w / "pre.bin").substr(0, 4) == "XEFW");
    const auto summary = nlohmann::json::parse(c.out.str());
    CHECK(summary.contains("source_eer"));
    CHECK(summary.contains("cross_eer"));

    SUBCASE("pretraining is reproducible") {
        REQUIRE(cmd_pretrain({cfg, w / "pre2.bin"}, c.io()) == kOk);
        CHECK(slurp(w / "pre.bin") == slurp(w / "pre2.bin"));
    }
    SUBCASE("malformed config writes nothing") {
        write(w / "bad.json", "{\"train\": ");
        CHECK(cmd_pretrain({w / "bad.json", w / "never.bin"}, c.io()) == kConfigError);
        CHECK_FALSE(fs::exists(w / "never.bin"));
        write(w / "unknown.json", R"({"train": {"epoch": 3}})");
        CHECK(cmd_pretrain({w / "unknown.json", w / "never.bin"}, c.io()) == kConfigError);
        CHECK_FALSE(fs::exists(w / "never.bin"));
    }
    SUBCASE("no-op adaptations keep the bytes") {
        AdaptArgs a;
        a.pretrained = w / "pre.bin";
        a.config = cfg;
        a.layers = "";
        a.out = w / "base.bin";
        CHECK(cmd_adapt(a, c.io()) == kOk);
        CHECK(slurp(w / "base.bin") == slurp(w / "pre.bin"));
        a.layers = "LN,ST,S0";
        a.lambda = 1.0;
        a.out = w / "lam1.bin";
        CHECK(cmd_adapt(a, c.io()) == kOk);
        CHECK(slurp(w / "lam1.bin") == slurp(w / "pre.bin"));
    }
    SUBCASE("adaptation touches only the adapted groups") {
        AdaptArgs a;
        a.pretrained = w / "pre.bin";
        a.config = cfg;
        a.layers = "LN,ST,S0";
        a.out = w / "ad.bin";
        a.log = w / "log.csv";
        REQUIRE(cmd_adapt(a, c.io()) == kOk);
        const hfr::net::BackboneConfig bb;
        const auto before = load_weights(w / "pre.bin", bb), after = load_weights(w / "ad.bin", bb);
        CHECK(hfr::adapt::verify_frozen(before, after, hfr::adapt::AdaptConfig::parse("LN,ST,S0")).ok);
        CHECK(slurp(w / "ad.bin") != slurp(w / "pre.bin"));
        CHECK(slurp(w / "log.csv").rfind("step,l_c,l_sdl,l_total\n", 0) == 0);

        a.out = w / "ad2.bin";
        a.log.reset();
        REQUIRE(cmd_adapt(a, c.io()) == kOk);
        CHECK(slurp(w / "ad.bin") == slurp(w / "ad2.bin"));
    }
    SUBCASE("adapt errors") {
        AdaptArgs a;
        a.pretrained = w / "pre.bin";
        a.config = cfg;
        a.layers = "LN,XX";
        a.out = w / "x.bin";
        Captured e;
        CHECK(cmd_adapt(a, e.io()) == kConfigError);
        CHECK(e.err.str().find("LN,ST,S0") != std::string::npos);
        CHECK_FALSE(fs::exists(w / "x.bin"));
        a.layers = "LN";
        a.pretrained = w / "missing.bin";
        CHECK(cmd_adapt(a, e.io()) == kConfigError);
        a.pretrained = w / "pre.bin";
        a.fold = 5;
        CHECK(cmd_adapt(a, e.io()) == kConfigError);
    }
    SUBCASE("evaluation reports") {
        EvalArgs e;
        e.model = w / "pre.bin";
        e.config = cfg;
        e.report = w / "r1.json";
        REQUIRE(cmd_eval(e, c.io()) == kOk);
        e.report = w / "r2.json";
        REQUIRE(cmd_eval(e, c.io()) == kOk);
        CHECK(slurp(w / "r1.json") == slurp(w / "r2.json"));
        const auto j = nlohmann::json::parse(slurp(w / "r1.json"));
        CHECK(j["protocol"] == "cross");
        CHECK(j["n_folds"] == 2);
        CHECK(j["mean"]["vr_at_far"].contains("1e-2"));

        e.protocol = "source";
        e.fold = 1;
        e.report = w / "r3.json";
        REQUIRE(cmd_eval(e, c.io()) == kOk);
        CHECK(nlohmann::json::parse(slurp(w / "r3.json"))["n_folds"] == 1);

        e.protocol = "sideways";
        CHECK(cmd_eval(e, c.io()) == kConfigError);
        e.protocol = "cross";
        e.model = w / "missing.bin";
        CHECK(cmd_eval(e, c.io()) == kConfigError);
    }
    SUBCASE("ablation tables") {
        AblateArgs a;
        a.config = cfg;
        a.layers_sweep = {"baseline", "LN"};
        a.lambda_sweep = {1.0, 0.5};
        a.out_dir = w / "abl";
        REQUIRE(cmd_ablate(a, c.io()) == kOk);
        std::istringstream layers(slurp(w / "abl" / "layers.csv")), lambdas(slurp(w / "abl" / "lambda.csv"));
        std::string header, base_row, lam_row;
        std::getline(layers, header);
        CHECK(header == "config,AUC,EER,Rank-1,VR@FAR=1%");
        std::getline(layers, base_row);
        std::getline(lambdas, header);
        std::getline(lambdas, lam_row);
        REQUIRE(base_row.rfind("baseline,", 0) == 0);
        REQUIRE(lam_row.rfind("1.00,", 0) == 0);
        CHECK(base_row.substr(9) == lam_row.substr(5));

        a.layers_sweep = {"LN", "QQ"};
        a.lambda_sweep.clear();
        CHECK(cmd_ablate(a, c.io()) == kConfigError);
        CHECK(slurp(w / "abl" / "layers.csv").find("QQ,nan") != std::string::npos);
    }
}

TEST_CASE("binary entry point") {
    Workdir w("hfr_cli_bin");
    write(w / "bad.json", "{]");
    CHECK(run_binary("pretrain --config \"" + (w / "bad.json").string() + "\" --out \"" + (w / "o.bin").string() + "\"",
                     w / "log.txt") == 1);
    CHECK_FALSE(fs::exists(w / "o.bin"));
    CHECK(run_binary("--print-defaults", w / "defaults.json") == 0);
    CHECK(RunConfig::parse(slurp(w / "defaults.json")) == RunConfig{});
    CHECK(run_binary("adapt --pretrained nowhere.bin", w / "log.txt") == 1);
    CHECK(run_binary("frobnicate", w / "log.txt") == 1);
    CHECK(run_binary("complexity", w / "cx.json") == 0);
    CHECK(nlohmann::json::parse(slurp(w / "cx.json"))["params_total"] == 21880);
}
