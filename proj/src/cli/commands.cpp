#include "hfr/cli/commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "hfr/adapt/partition.hpp"
#include "hfr/cli/gradcheck_suite.hpp"
#include "hfr/cli/pipeline.hpp"
#include "hfr/cli/weights.hpp"
#include "hfr/loss/losses.hpp"

namespace hfr::cli {

using nlohmann::ordered_json;

namespace {

RunConfig load_config(const std::optional<std::filesystem::path>& path) {
    return path ? RunConfig::load(*path) : RunConfig{};
}

template <typename F>
int guarded(Streams io, F&& body) {
    try {
        return body();
    } catch (const train::TrainingDiverged& e) {
        io.err << "error: training diverged: " << e.what() << '\n';
        return kDiverged;
    } catch (const loss::DegenerateEmbedding& e) {
        io.err << "error: training diverged: " << e.what() << '\n';
        return kDiverged;
    } catch (const std::exception& e) {
        io.err << "error: " << e.what() << '\n';
        return kConfigError;
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

ordered_json partition_json(const adapt::PartitionReport& r) {
    return {{"n_ln_params", r.n_ln_params},
            {"n_adapted_params", r.n_adapted_params},
            {"n_frozen_params", r.n_frozen_params},
            {"k_ln_layers", r.k_ln_layers}};
}

std::vector<double> with_one_percent(std::vector<double> targets) {
    bool has = false;
    for (double f : targets) has = has || f == 1e-2;
    if (!has) targets.push_back(1e-2);
    return targets;
}

std::string ablation_row(const std::string& label, const metrics::EvalReport& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%.4f,%.4f,%.4f,%.4f\n", 100.0 * m.auc, 100.0 * m.eer, 100.0 * m.rank1,
                  100.0 * m.vr_at_far.at(1e-2));
    return label + buf;
}

}  // namespace

int cmd_print_defaults(Streams io) {
    io.out << RunConfig{}.to_json().dump(2) << '\n';
    return kOk;
}

int cmd_pretrain(const PretrainArgs& args, Streams io) {
    return guarded(io, [&] {
        const RunConfig config = load_config(args.config);
        const net::Model model = pretrain(config);
        const data::Dataset dataset = benchmark_dataset(config);
        const data::ProtocolSplit split = folds(config);
        const auto source = evaluate(model, dataset, split, eval::Protocol::Source, config.eval.far_targets);
        const auto cross = evaluate(model, dataset, split, eval::Protocol::Cross, config.eval.far_targets);
        save_weights(model, args.out);
        ordered_json j;
        j["source_eer"] = source.mean.eer;
        j["cross_eer"] = cross.mean.eer;
        j["n_folds"] = source.n_folds;
        io.out << j.dump(2) << '\n';
        return kOk;
    });
}

int cmd_adapt(const AdaptArgs& args, Streams io) {
    return guarded(io, [&] {
        RunConfig config = load_config(args.config);
        if (args.layers) config.train.adapt_layers = *args.layers;
        if (args.lambda) config.train.lambda = *args.lambda;
        if (args.margin) config.train.margin = *args.margin;
        config.validate();
        const train::TrainConfig tc = config.train_config();

        const net::Model pretrained = load_weights(args.pretrained, config.backbone);
        const data::Dataset dataset = benchmark_dataset(config);
        const train::AdaptResult result = adapt_fold(pretrained, dataset, folds(config), args.fold, tc);
        const adapt::FrozenCheck frozen = adapt::verify_frozen(pretrained, result.model, tc.adapt);

        save_weights(result.model, args.out);
        if (args.log) {
            std::ostringstream csv;
            result.log.write_csv(csv);
            write_text(*args.log, csv.str());
        }
        ordered_json j;
        j["layers"] = tc.adapt.to_string();
        j["lambda"] = tc.lambda;
        j["margin"] = tc.margin;
        j["fold"] = args.fold;
        j["steps"] = result.log.steps.size();
        j["partition"] = partition_json(result.log.report);
        j["frozen_check"] = static_cast<bool>(frozen);
        if (!result.log.steps.empty()) {
            const auto& last = result.log.steps.back();
            j["final"] = {{"l_c", last.l_c}, {"l_sdl", last.l_sdl}, {"l_total", last.l_total}};
        }
        io.out << j.dump(2) << '\n';
        return kOk;
    });
}

int cmd_eval(const EvalArgs& args, Streams io) {
    return guarded(io, [&] {
        const RunConfig config = load_config(args.config);
        const auto protocol = eval::parse_protocol(args.protocol);
        if (!protocol) throw std::invalid_argument("unknown protocol '" + args.protocol + "' (use cross or source)");
        const net::Model model = load_weights(args.model, config.backbone);
        const auto summary = evaluate(model, benchmark_dataset(config), folds(config), *protocol,
                                      config.eval.far_targets, args.fold);
        ordered_json j;
        j["protocol"] = eval::protocol_name(*protocol);
        const ordered_json body = metrics::to_json(summary);
        for (const auto& [k, v] : body.items()) j[k] = v;
        write_text(args.report, j.dump(2) + "\n");
        io.out << metrics::to_json(summary.mean).dump(2) << '\n';
        return kOk;
    });
}

std::vector<std::string> split_layer_sweep(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';')) out.push_back(item);
    return out;
}

int cmd_ablate(const AblateArgs& args, Streams io) {
    int status = kOk;
    const int setup = guarded(io, [&] {
        if (args.layers_sweep.empty() && args.lambda_sweep.empty()) {
            throw std::invalid_argument("ablate needs a nonempty --layers-sweep or --lambda-sweep");
        }
        const RunConfig config = load_config(args.config);
        std::filesystem::create_directories(args.out_dir);
        const net::Model pretrained = pretrain(config);
        const data::Dataset dataset = benchmark_dataset(config);
        const data::ProtocolSplit split = folds(config);
        const std::vector<double> targets = with_one_percent(config.eval.far_targets);

        const auto cell = [&](const std::string& label, train::TrainConfig tc, std::string& csv) {
            const int rc = guarded(io, [&] {
                std::vector<metrics::EvalReport> reports;
                for (std::size_t k = 0; k < split.folds.size(); ++k) {
                    const train::AdaptResult r = adapt_fold(pretrained, dataset, split, k, tc);
                    reports.push_back(eval::evaluate_protocol(r.model, dataset, split.folds[k].eval_ids,
                                                              eval::Protocol::Cross, targets));
                }
                csv += ablation_row(label, metrics::aggregate_folds(reports).mean);
                return kOk;
            });
            if (rc != kOk) {
                io.err << "cell '" << label << "' failed\n";
                csv += label + ",nan,nan,nan,nan\n";
                if (status == kOk || rc == kDiverged) status = rc;
            }
        };

        const std::string header = "config,AUC,EER,Rank-1,VR@FAR=1%\n";
        if (!args.layers_sweep.empty()) {
            std::string csv = header;
            for (const auto& layers : args.layers_sweep) {
                train::TrainConfig tc = config.train_config();
                std::string label = layers;
                try {
                    tc.adapt = adapt::AdaptConfig::parse(layers);
                    label = tc.adapt.to_string();
                } catch (const std::exception& e) {
                    io.err << "cell '" << layers << "' failed: " << e.what() << '\n';
                    csv += layers + ",nan,nan,nan,nan\n";
                    if (status == kOk) status = kConfigError;
                    continue;
                }
                cell(label, tc, csv);
            }
            write_text(args.out_dir / "layers.csv", csv);
        }
        if (!args.lambda_sweep.empty()) {
            std::string csv = header;
            for (double lambda : args.lambda_sweep) {
                train::TrainConfig tc = config.train_config();
                tc.lambda = lambda;
                char label[32];
                std::snprintf(label, sizeof label, "%.2f", lambda);
                cell(label, tc, csv);
            }
            write_text(args.out_dir / "lambda.csv", csv);
        }
        return kOk;
    });
    return setup != kOk ? setup : status;
}

int cmd_gradcheck(Streams io) {
    return guarded(io, [&] { return run_gradcheck(gradcheck_cases(), io.out); });
}

int cmd_complexity(const ComplexityArgs& args, Streams io) {
    return guarded(io, [&] {
        const RunConfig config = load_config(args.config);
        const net::Model model = net::build(config.backbone, 0);
        const net::ParameterCount count = net::count_parameters(model);
        ordered_json groups = ordered_json::object();
        for (net::ParameterGroup g : net::kAllGroups) {
            const auto it = count.per_group.find(g);
            groups[std::string(net::group_name(g))] = it == count.per_group.end() ? 0 : it->second;
        }
        ordered_json j;
        j["params_total"] = count.total;
        j["params_per_group"] = groups;
        j["macs_per_sample"] = net::estimate_flops(model);
        io.out << j.dump(2) << '\n';
        return kOk;
    });
}

int cmd_export(const ExportArgs& args, Streams io) {
    return guarded(io, [&] {
        const RunConfig config = load_config(args.config);
        std::filesystem::create_directories(args.out_dir);
        const data::Dataset dataset = benchmark_dataset(config);
        const auto keys = dataset.enumerate();
        data::export_images(dataset, keys, args.out_dir / "images.f32", args.out_dir / "manifest.csv");
        io.out << "{\"images\": " << keys.size() << "}\n";
        return kOk;
    });
}

}  // namespace hfr::cli
