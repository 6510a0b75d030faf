#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hfr::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kDiverged = 2, kGradcheckFailed = 3 };

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

/// Prints the default RunConfig as JSON.
int cmd_print_defaults(Streams io);

struct PretrainArgs {
    std::optional<std::filesystem::path> config;
    std::filesystem::path out;
};
int cmd_pretrain(const PretrainArgs& args, Streams io);

struct AdaptArgs {
    std::filesystem::path pretrained;
    std::optional<std::string> layers;
    std::optional<double> lambda;
    std::optional<double> margin;
    std::optional<std::filesystem::path> config;
    std::filesystem::path out;
    std::optional<std::filesystem::path> log;
    std::size_t fold = 0;
};
int cmd_adapt(const AdaptArgs& args, Streams io);

struct EvalArgs {
    std::filesystem::path model;
    std::string protocol = "cross";
    std::optional<std::filesystem::path> config;
    std::filesystem::path report;
    std::optional<std::size_t> fold;
};
int cmd_eval(const EvalArgs& args, Streams io);

struct AblateArgs {
    std::optional<std::filesystem::path> config;
    /// Layer sets; each entry is a preset such as "LN,ST" or "baseline".
    std::vector<std::string> layers_sweep;
    std::vector<double> lambda_sweep;
    std::filesystem::path out_dir;
};
int cmd_ablate(const AblateArgs& args, Streams io);

/// Splits "baseline;LN;LN,ST" into layer-set strings.
std::vector<std::string> split_layer_sweep(const std::string& text);

int cmd_gradcheck(Streams io);

struct ComplexityArgs {
    std::optional<std::filesystem::path> config;
};
int cmd_complexity(const ComplexityArgs& args, Streams io);

struct ExportArgs {
    std::optional<std::filesystem::path> config;
    std::filesystem::path out_dir;
};
/// Writes benchmark images (blob + manifest) for inspection.
int cmd_export(const ExportArgs& args, Streams io);

}  // namespace hfr::cli
