#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfr/grad/tensor.hpp"

// Verification and identification metrics. Scores are cosine similarities:
// higher means more likely the same identity.
namespace hfr::metrics {

struct ScoreSet {
    std::vector<double> genuine;
    std::vector<double> impostor;
};

struct ScoreMatrix {
    ScoreSet scores;
    /// G x P, entry (i, j) = cosine(gallery_i, probe_j).
    grad::Tensor similarity;
};

/// Throws loss::DegenerateEmbedding for zero-norm rows.
ScoreMatrix score_matrix(const grad::Tensor& gallery, std::span<const int> gallery_labels, const grad::Tensor& probe,
                         std::span<const int> probe_labels);

/// Mann-Whitney AUC: P(genuine > impostor) + 0.5 P(genuine == impostor).
double auc(const ScoreSet& scores);

/// Sweeps every observed score as threshold tau with FAR = P(impostor >= tau),
/// FRR = P(genuine < tau); returns (FAR + FRR) / 2 at the lowest tau that
/// minimizes |FAR - FRR|.
double eer(const ScoreSet& scores);

/// Fraction of probes whose most similar gallery entry shares their label.
/// Ties go to the lowest gallery index.
double rank1(const grad::Tensor& similarity, std::span<const int> gallery_labels, std::span<const int> probe_labels);

struct VerificationRate {
    double vr = 0.0;
    double realized_far = 0.0;
    double threshold = 0.0;
    /// Fewer than 1 / far_target impostors: the target cannot be resolved.
    bool underpowered = false;
};

/// Threshold is the (k+1)-th largest impostor score with
/// k = floor(far_target * n_impostor); a pair is accepted iff score > tau.
VerificationRate vr_at_far(const ScoreSet& scores, double far_target);

inline const std::vector<double>& default_far_targets() {
    static const std::vector<double> targets = {5e-2, 1e-2, 1e-3, 1e-4};
    return targets;
}

struct EvalReport {
    double auc = 0.0;
    double eer = 0.0;
    double rank1 = 0.0;
    std::map<double, double> vr_at_far;

    bool operator==(const EvalReport&) const = default;
};

EvalReport evaluate(const ScoreMatrix& matrix, std::span<const int> gallery_labels,
                    std::span<const int> probe_labels, std::span<const double> far_targets);

struct FoldSummary {
    std::size_t n_folds = 0;
    EvalReport mean;
    /// Sample standard deviation (n - 1); zero for a single fold.
    EvalReport std;
    std::vector<EvalReport> folds;
};

FoldSummary aggregate_folds(std::span<const EvalReport> reports);

/// "5e-2", "1e-4", ... as used for vr_at_far keys.
std::string far_key(double far_target);

nlohmann::ordered_json to_json(const EvalReport& report);
nlohmann::ordered_json to_json(const FoldSummary& summary);

}  // namespace hfr::metrics
