#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hfr/cli/commands.hpp"

int main(int argc, char** argv) {
    using namespace hfr::cli;
    CLI::App app{"Cross-modal face embedding adaptation with self-distillation"};
    app.require_subcommand(0, 1);
    bool print_defaults = false;
    app.add_flag("--print-defaults", print_defaults, "Print the default run configuration as JSON");

    std::string config;
    const auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    };
    const auto config_opt = [&]() -> std::optional<std::filesystem::path> {
        if (config.empty()) return std::nullopt;
        return config;
    };

    PretrainArgs pretrain;
    auto* pre = app.add_subcommand("pretrain", "Train the source-modality model");
    add_config(pre);
    pre->add_option("--out", pretrain.out, "Output weights file")->required();

    AdaptArgs adapt;
    std::string layers;
    double lambda = 0.0, margin = 0.0;
    auto* ad = app.add_subcommand("adapt", "Adapt a pretrained model to the target modality");
    ad->add_option("--pretrained", adapt.pretrained, "Pretrained weights file")->required();
    auto* layers_opt = ad->add_option("--layers", layers, "Adapted layer set, e.g. LN,ST,S0 or baseline");
    auto* lambda_opt = ad->add_option("--lambda", lambda, "Self-distillation weight in [0, 1]");
    auto* margin_opt = ad->add_option("--margin", margin, "Contrastive margin in [0, 1]");
    add_config(ad);
    ad->add_option("--out", adapt.out, "Output weights file")->required();
    std::string log;
    ad->add_option("--log", log, "Per-step loss log (CSV)");
    ad->add_option("--fold", adapt.fold, "Fold whose training identities are used")->capture_default_str();

    EvalArgs ev;
    std::size_t eval_fold = 0;
    auto* evc = app.add_subcommand("eval", "Evaluate a model on held-out identities");
    evc->add_option("--model", ev.model, "Weights file")->required();
    evc->add_option("--protocol", ev.protocol, "cross or source")
        ->check(CLI::IsMember({"cross", "source"}))
        ->capture_default_str();
    add_config(evc);
    evc->add_option("--report", ev.report, "Output report (JSON)")->required();
    auto* eval_fold_opt = evc->add_option("--fold", eval_fold, "Evaluate a single fold (default: all)");

    AblateArgs ablate;
    std::string layers_sweep;
    auto* ab = app.add_subcommand("ablate", "Sweep adapted layer sets and lambda");
    add_config(ab);
    ab->add_option("--layers-sweep", layers_sweep, "Semicolon-separated layer sets, e.g. \"baseline;LN;LN,ST\"");
    ab->add_option("--lambda-sweep", ablate.lambda_sweep, "Comma-separated lambda values")->delimiter(',');
    ab->add_option("--out-dir", ablate.out_dir, "Directory for layers.csv and lambda.csv")->required();

    auto* gc = app.add_subcommand("gradcheck", "Check every op's gradient against finite differences");

    auto* cx = app.add_subcommand("complexity", "Report parameter and multiply-accumulate counts");
    add_config(cx);

    ExportArgs exp;
    auto* ex = app.add_subcommand("export-data", "Write the rendered benchmark images to disk");
    add_config(ex);
    ex->add_option("--out-dir", exp.out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kConfigError;
    }

    const Streams io{std::cout, std::cerr};
    if (print_defaults) return cmd_print_defaults(io);
    if (pre->parsed()) {
        pretrain.config = config_opt();
        return cmd_pretrain(pretrain, io);
    }
    if (ad->parsed()) {
        adapt.config = config_opt();
        if (*layers_opt) adapt.layers = layers;
        if (*lambda_opt) adapt.lambda = lambda;
        if (*margin_opt) adapt.margin = margin;
        if (!log.empty()) adapt.log = log;
        return cmd_adapt(adapt, io);
    }
    if (evc->parsed()) {
        ev.config = config_opt();
        if (*eval_fold_opt) ev.fold = eval_fold;
        return cmd_eval(ev, io);
    }
    if (ab->parsed()) {
        ablate.config = config_opt();
        if (!layers_sweep.empty()) ablate.layers_sweep = split_layer_sweep(layers_sweep);
        return cmd_ablate(ablate, io);
    }
    if (gc->parsed()) return cmd_gradcheck(io);
    if (cx->parsed()) return cmd_complexity({config_opt()}, io);
    if (ex->parsed()) {
        exp.config = config_opt();
        return cmd_export(exp, io);
    }
    std::cout << app.help();
    return kOk;
}
