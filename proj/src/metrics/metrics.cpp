#include "hfr/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "hfr/loss/losses.hpp"

namespace hfr::metrics {

using grad::Shape;
using grad::Tensor;

namespace {

void require_both_classes(const ScoreSet& s, const char* what) {
    if (s.genuine.empty() || s.impostor.empty()) {
        throw std::invalid_argument(std::string(what) + ": genuine and impostor sets must both be nonempty");
    }
}

}  // namespace

ScoreMatrix score_matrix(const Tensor& gallery, std::span<const int> gallery_labels, const Tensor& probe,
                         std::span<const int> probe_labels) {
    if (gallery.rank() != 2 || probe.rank() != 2) {
        throw grad::DimensionError("score_matrix", "rank", "embeddings must be 2-D");
    }
    if (gallery.dim(1) != probe.dim(1)) {
        throw grad::DimensionError("score_matrix", "dim",
                                   std::to_string(gallery.dim(1)) + " vs " + std::to_string(probe.dim(1)));
    }
    if (gallery_labels.size() != gallery.dim(0) || probe_labels.size() != probe.dim(0)) {
        throw grad::DimensionError("score_matrix", "labels", "label count differs from embedding rows");
    }
    const std::size_t g = gallery.dim(0), p = probe.dim(0), d = gallery.dim(1);
    ScoreMatrix out{{}, Tensor(Shape{g, p})};
    for (std::size_t i = 0; i < g; ++i) {
        const auto gi = gallery.data().subspan(i * d, d);
        for (std::size_t j = 0; j < p; ++j) {
            const double s = loss::cosine(gi, probe.data().subspan(j * d, d));
            out.similarity[i * p + j] = s;
            (gallery_labels[i] == probe_labels[j] ? out.scores.genuine : out.scores.impostor).push_back(s);
        }
    }
    return out;
}

double auc(const ScoreSet& scores) {
    require_both_classes(scores, "auc");
    std::vector<double> imp = scores.impostor;
    std::sort(imp.begin(), imp.end());
    // Twice the Mann-Whitney U statistic, kept integral.
    std::uint64_t twice_u = 0;
    for (double g : scores.genuine) {
        const auto lo = std::lower_bound(imp.begin(), imp.end(), g);
        const auto hi = std::upper_bound(lo, imp.end(), g);
        twice_u += 2 * static_cast<std::uint64_t>(lo - imp.begin()) + static_cast<std::uint64_t>(hi - lo);
    }
    const double pairs = static_cast<double>(scores.genuine.size()) * static_cast<double>(scores.impostor.size());
    return static_cast<double>(twice_u) / (2.0 * pairs);
}

double eer(const ScoreSet& scores) {
    require_both_classes(scores, "eer");
    std::vector<double> gen = scores.genuine, imp = scores.impostor;
    std::sort(gen.begin(), gen.end());
    std::sort(imp.begin(), imp.end());
    std::vector<double> thresholds;
    thresholds.reserve(gen.size() + imp.size());
    std::merge(gen.begin(), gen.end(), imp.begin(), imp.end(), std::back_inserter(thresholds));
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    const double ng = static_cast<double>(gen.size()), ni = static_cast<double>(imp.size());
    std::size_t gen_below = 0, imp_below = 0;
    double best_gap = INFINITY, best = 0.0;
    for (double tau : thresholds) {
        while (gen_below < gen.size() && gen[gen_below] < tau) ++gen_below;
        while (imp_below < imp.size() && imp[imp_below] < tau) ++imp_below;
        const double far = static_cast<double>(imp.size() - imp_below) / ni;
        const double frr = static_cast<double>(gen_below) / ng;
        const double gap = std::abs(far - frr);
        if (gap < best_gap) {
            best_gap = gap;
            best = (far + frr) / 2.0;
        }
    }
    return best;
}

double rank1(const Tensor& similarity, std::span<const int> gallery_labels, std::span<const int> probe_labels) {
    if (similarity.rank() != 2 || similarity.dim(0) != gallery_labels.size() ||
        similarity.dim(1) != probe_labels.size()) {
        throw grad::DimensionError("rank1", "similarity", "matrix must be gallery x probe");
    }
    const std::set<int> known(gallery_labels.begin(), gallery_labels.end());
    const std::size_t g = gallery_labels.size(), p = probe_labels.size();
    std::size_t hits = 0;
    for (std::size_t j = 0; j < p; ++j) {
        if (!known.contains(probe_labels[j])) {
            throw std::invalid_argument("rank1: probe identity " + std::to_string(probe_labels[j]) +
                                        " has no gallery entry");
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < g; ++i) {
            if (similarity[i * p + j] > similarity[best * p + j]) best = i;
        }
        if (gallery_labels[best] == probe_labels[j]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(p);
}

VerificationRate vr_at_far(const ScoreSet& scores, double far_target) {
    if (!(far_target > 0.0 && far_target < 1.0)) throw std::invalid_argument("vr_at_far: target must lie in (0, 1)");
    require_both_classes(scores, "vr_at_far");
    std::vector<double> imp = scores.impostor;
    const double ni = static_cast<double>(imp.size());
    const auto k = std::min(static_cast<std::size_t>(std::floor(far_target * ni)), imp.size() - 1);
    std::nth_element(imp.begin(), imp.begin() + static_cast<std::ptrdiff_t>(k), imp.end(), std::greater<>());
    VerificationRate out;
    out.threshold = imp[k];
    out.underpowered = ni < 1.0 / far_target;
    const auto above = [&](const std::vector<double>& v) {
        return static_cast<double>(std::count_if(v.begin(), v.end(), [&](double s) { return s > out.threshold; }));
    };
    out.vr = above(scores.genuine) / static_cast<double>(scores.genuine.size());
    out.realized_far = above(scores.impostor) / ni;
    return out;
}

EvalReport evaluate(const ScoreMatrix& matrix, std::span<const int> gallery_labels,
                    std::span<const int> probe_labels, std::span<const double> far_targets) {
    EvalReport r;
    r.auc = auc(matrix.scores);
    r.eer = eer(matrix.scores);
    r.rank1 = rank1(matrix.similarity, gallery_labels, probe_labels);
    for (double f : far_targets) r.vr_at_far[f] = vr_at_far(matrix.scores, f).vr;
    return r;
}

FoldSummary aggregate_folds(std::span<const EvalReport> reports) {
    if (reports.empty()) throw std::invalid_argument("aggregate_folds: no reports");
    FoldSummary s;
    s.n_folds = reports.size();
    s.folds.assign(reports.begin(), reports.end());
    const double n = static_cast<double>(reports.size());

    const auto stats = [&](auto get, double& mean, double& sd) {
        // Offsets from the first fold keep identical folds exact.
        const double first = get(reports.front());
        double offset = 0.0;
        for (const auto& r : reports) offset += get(r) - first;
        const double m = first + offset / n;
        double ss = 0.0;
        for (const auto& r : reports) ss += (get(r) - m) * (get(r) - m);
        mean = m;
        sd = reports.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    };
    stats([](const EvalReport& r) { return r.auc; }, s.mean.auc, s.std.auc);
    stats([](const EvalReport& r) { return r.eer; }, s.mean.eer, s.std.eer);
    stats([](const EvalReport& r) { return r.rank1; }, s.mean.rank1, s.std.rank1);
    for (const auto& [far, unused] : reports.front().vr_at_far) {
        stats([far = far](const EvalReport& r) { return r.vr_at_far.at(far); }, s.mean.vr_at_far[far],
              s.std.vr_at_far[far]);
    }
    return s;
}

std::string far_key(double far_target) {
    if (!(far_target > 0.0)) throw std::invalid_argument("far_key: target must be positive");
    int exponent = static_cast<int>(std::floor(std::log10(far_target)));
    double mantissa = far_target / std::pow(10.0, exponent);
    mantissa = std::round(mantissa * 1e6) / 1e6;
    if (mantissa >= 10.0) {
        mantissa /= 10.0;
        ++exponent;
    }
    char buf[48];
    std::snprintf(buf, sizeof buf, "%ge%d", mantissa, exponent);
    return buf;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["auc"] = report.auc;
    j["eer"] = report.eer;
    j["rank1"] = report.rank1;
    nlohmann::ordered_json vr = nlohmann::ordered_json::object();
    // Largest target first: "5e-2", "1e-2", "1e-3", "1e-4".
    for (auto it = report.vr_at_far.rbegin(); it != report.vr_at_far.rend(); ++it) vr[far_key(it->first)] = it->second;
    j["vr_at_far"] = vr;
    return j;
}

nlohmann::ordered_json to_json(const FoldSummary& summary) {
    nlohmann::ordered_json j;
    j["n_folds"] = summary.n_folds;
    j["mean"] = to_json(summary.mean);
    j["std"] = to_json(summary.std);
    nlohmann::ordered_json folds = nlohmann::ordered_json::array();
    for (const auto& f : summary.folds) folds.push_back(to_json(f));
    j["folds"] = folds;
    return j;
}

}  // namespace hfr::metrics
