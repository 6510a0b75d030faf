#include "hfr/data/syndata.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace hfr::data {

using grad::Shape;
using grad::Tensor;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t kLatentStream = 0x4c4154454e54ULL;
constexpr std::uint64_t kNoiseStream = 0x4e4f495345ULL;
constexpr std::uint64_t kRendererSeed = 0x52454e444552ULL;

constexpr std::size_t kBlobs = 4;
constexpr std::size_t kStripes = 2;
constexpr std::size_t kParamsPerComponent = 7;
constexpr std::size_t kRenderParams = (kBlobs + kStripes) * kParamsPerComponent;

constexpr double kBackground = 0.35;
constexpr double kBlobAmplitude = 0.15;
constexpr double kBlobAmplitudeSpread = 0.3;
constexpr double kStripeAmplitude = 0.1;
constexpr double kStripeAmplitudeSpread = 0.05;
constexpr double kTargetFloor = 0.15;
constexpr double kTargetContrast = 0.3;
constexpr double kSourceNoiseSigma = 0.06;
constexpr double kTargetNoiseHalfWidth = 0.12;

// Fixed latent -> geometry projection, shared by every dataset.
const std::array<double, kRenderParams * kLatentDim>& projection() {
    static const auto table = [] {
        std::array<double, kRenderParams * kLatentDim> a{};
        std::mt19937_64 rng(kRendererSeed);
        std::normal_distribution<double> n01(0.0, 1.0);
        for (auto& v : a) v = n01(rng);
        return a;
    }();
    return table;
}

// Squashed geometry parameters in (-1, 1).
std::array<double, kRenderParams> geometry(const IdentitySpec& identity) {
    const auto& a = projection();
    const double scale = 1.0 / std::sqrt(static_cast<double>(kLatentDim));
    std::array<double, kRenderParams> u{};
    for (std::size_t p = 0; p < kRenderParams; ++p) {
        double s = 0.0;
        for (std::size_t j = 0; j < kLatentDim; ++j) s += a[p * kLatentDim + j] * identity.latent[j];
        u[p] = std::tanh(s * scale);
    }
    return u;
}

// Unclipped 3 x S x S blob and stripe relief without background.
std::vector<double> relief(const IdentitySpec& identity, std::size_t size) {
    const auto u = geometry(identity);
    const std::size_t plane = size * size;
    std::vector<double> out(3 * plane, 0.0);
    const double mid = 0.5 * static_cast<double>(size);
    const double span = 0.3125 * static_cast<double>(size);

    for (std::size_t b = 0; b < kBlobs; ++b) {
        const double* q = &u[b * kParamsPerComponent];
        const double cx = mid + span * q[0];
        const double cy = mid + span * q[1];
        const double sigma = (4.0 + 2.0 * q[2]) * static_cast<double>(size) / 32.0;
        const double amp = kBlobAmplitude + kBlobAmplitudeSpread * q[3];
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                const double v = amp * std::exp(-(dx * dx + dy * dy) * inv2s2);
                for (std::size_t c = 0; c < 3; ++c) out[c * plane + y * size + x] += (0.6 + 0.4 * q[4 + c]) * v;
            }
        }
    }
    for (std::size_t s = 0; s < kStripes; ++s) {
        const double* q = &u[(kBlobs + s) * kParamsPerComponent];
        const double angle = 0.5 * std::numbers::pi * (q[0] + 1.0);
        const double freq = (0.08 + 0.05 * q[1]) * 32.0 / static_cast<double>(size);
        const double phase = std::numbers::pi * q[2];
        const double amp = kStripeAmplitude + kStripeAmplitudeSpread * q[3];
        const double ca = std::cos(angle), sa = std::sin(angle);
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const double t = static_cast<double>(x) * ca + static_cast<double>(y) * sa;
                const double v = amp * std::cos(2.0 * std::numbers::pi * freq * t + phase);
                for (std::size_t c = 0; c < 3; ++c) out[c * plane + y * size + x] += (0.6 + 0.4 * q[4 + c]) * v;
            }
        }
    }
    return out;
}

double clip01(double v) {
    return std::clamp(v, 0.0, 1.0);
}

std::uint64_t noise_seed(const IdentitySpec& identity, Modality modality, std::uint64_t sample_seed) {
    std::uint64_t s = mix_seed(identity.dataset_seed, kNoiseStream);
    s = mix_seed(s, static_cast<std::uint64_t>(identity.id));
    s = mix_seed(s, static_cast<std::uint64_t>(modality));
    return mix_seed(s, sample_seed);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(a) ^ b);
}

std::string_view modality_name(Modality m) {
    return m == Modality::Source ? "source" : "target";
}

IdentitySpec make_identity(std::uint64_t dataset_seed, int id) {
    IdentitySpec spec;
    spec.id = id;
    spec.dataset_seed = dataset_seed;
    std::mt19937_64 rng(mix_seed(mix_seed(dataset_seed, kLatentStream), static_cast<std::uint64_t>(id)));
    std::normal_distribution<double> n01(0.0, 1.0);
    spec.latent.resize(kLatentDim);
    for (auto& v : spec.latent) v = n01(rng);
    return spec;
}

Tensor render_clean(const IdentitySpec& identity, Modality modality, std::size_t size) {
    if (identity.latent.size() != kLatentDim) throw std::invalid_argument("render: latent has wrong length");
    const std::vector<double> rel = relief(identity, size);
    const std::size_t plane = size * size;
    if (modality == Modality::Source) {
        std::vector<double> src(3 * plane);
        for (std::size_t i = 0; i < src.size(); ++i) src[i] = clip01(kBackground + rel[i]);
        return Tensor(Shape{3, size, size}, std::move(src));
    }

    // Collapse channels, darken and compress contrast, 3x3 box blur.
    std::vector<double> remap(plane);
    for (std::size_t i = 0; i < plane; ++i) {
        const double gray = kBackground + (rel[i] + rel[plane + i] + rel[2 * plane + i]) / 3.0;
        remap[i] = kTargetFloor + kTargetContrast * gray;
    }
    std::vector<double> out(plane);
    const auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
        const auto n = static_cast<std::ptrdiff_t>(size) - 1;
        return remap[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y, 0, n)) * size +
                   static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x, 0, n))];
    };
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            double s = 0.0;
            for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                    s += at(static_cast<std::ptrdiff_t>(y) + dy, static_cast<std::ptrdiff_t>(x) + dx);
                }
            }
            out[y * size + x] = clip01(s / 9.0);
        }
    }
    return Tensor(Shape{1, size, size}, std::move(out));
}

Tensor render(const IdentitySpec& identity, Modality modality, std::uint64_t sample_seed, std::size_t size) {
    Tensor img = render_clean(identity, modality, size);
    std::mt19937_64 rng(noise_seed(identity, modality, sample_seed));
    if (modality == Modality::Source) {
        std::normal_distribution<double> noise(0.0, kSourceNoiseSigma);
        for (auto& v : img.data()) v = clip01(v + noise(rng));
    } else {
        std::uniform_real_distribution<double> noise(-kTargetNoiseHalfWidth, kTargetNoiseHalfWidth);
        for (auto& v : img.data()) v = clip01(v + noise(rng));
    }
    return img;
}

Dataset::Dataset(std::size_t n_ids, std::size_t samples_per_id, std::uint64_t dataset_seed, std::size_t image_size)
    : samples_per_id_(samples_per_id), seed_(dataset_seed), image_size_(image_size) {
    if (n_ids < 2) throw std::invalid_argument("make_dataset: need at least 2 identities");
    if (samples_per_id < 1) throw std::invalid_argument("make_dataset: samples_per_id must be >= 1");
    const std::size_t plane = image_size * image_size;
    identities_.reserve(n_ids);
    source_pixels_.resize(n_ids * samples_per_id * 3 * plane);
    target_pixels_.resize(n_ids * samples_per_id * plane);
    for (std::size_t i = 0; i < n_ids; ++i) {
        identities_.push_back(make_identity(dataset_seed, static_cast<int>(i)));
        for (std::size_t s = 0; s < samples_per_id; ++s) {
            const Tensor src = render(identities_.back(), Modality::Source, s, image_size);
            const Tensor tgt = render(identities_.back(), Modality::Target, s, image_size);
            std::copy(src.data().begin(), src.data().end(), source_pixels_.begin() + (i * samples_per_id + s) * 3 * plane);
            std::copy(tgt.data().begin(), tgt.data().end(), target_pixels_.begin() + (i * samples_per_id + s) * plane);
        }
    }
}

const IdentitySpec& Dataset::identity(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= identities_.size()) {
        throw std::out_of_range("Dataset: identity " + std::to_string(id) + " out of range");
    }
    return identities_[static_cast<std::size_t>(id)];
}

std::vector<SampleKey> Dataset::enumerate() const {
    std::vector<SampleKey> keys;
    keys.reserve(size());
    for (std::size_t i = 0; i < n_ids(); ++i) {
        for (auto m : {Modality::Source, Modality::Target}) {
            for (std::size_t s = 0; s < samples_per_id_; ++s) keys.push_back({static_cast<int>(i), m, s});
        }
    }
    return keys;
}

std::span<const double> Dataset::raw(const SampleKey& key) const {
    identity(key.id);
    if (key.sample >= samples_per_id_) throw std::out_of_range("Dataset: sample index out of range");
    const std::size_t plane = image_size_ * image_size_;
    const std::size_t slot = static_cast<std::size_t>(key.id) * samples_per_id_ + key.sample;
    if (key.modality == Modality::Source) return std::span(source_pixels_).subspan(slot * 3 * plane, 3 * plane);
    return std::span(target_pixels_).subspan(slot * plane, plane);
}

Tensor Dataset::image(const SampleKey& key) const {
    Tensor t = images(std::span(&key, 1));
    t.reshape(Shape{3, image_size_, image_size_});
    return t;
}

Tensor Dataset::images(std::span<const SampleKey> keys) const {
    if (keys.empty()) throw std::invalid_argument("Dataset::images: no keys");
    const std::size_t plane = image_size_ * image_size_;
    Tensor out(Shape{keys.size(), 3, image_size_, image_size_});
    auto dst = out.data();
    for (std::size_t k = 0; k < keys.size(); ++k) {
        const auto src = raw(keys[k]);
        double* d = dst.data() + k * 3 * plane;
        if (keys[k].modality == Modality::Source) {
            std::copy(src.begin(), src.end(), d);
        } else {
            for (std::size_t c = 0; c < 3; ++c) std::copy(src.begin(), src.end(), d + c * plane);
        }
    }
    return out;
}

std::vector<SampleKey> Dataset::keys_for(std::span<const int> ids, Modality modality) const {
    std::vector<SampleKey> keys;
    keys.reserve(ids.size() * samples_per_id_);
    for (int id : ids) {
        identity(id);
        for (std::size_t s = 0; s < samples_per_id_; ++s) keys.push_back({id, modality, s});
    }
    return keys;
}

Dataset make_dataset(std::size_t n_ids, std::size_t samples_per_id, std::uint64_t dataset_seed) {
    return Dataset(n_ids, samples_per_id, dataset_seed);
}

PairBatch sample_pairs(const Dataset& dataset, std::span<const int> ids, std::size_t batch_size,
                       double positive_fraction, std::uint64_t rng_seed, PairMode mode) {
    if (ids.size() < 2) throw std::invalid_argument("sample_pairs: need at least 2 identities");
    if (batch_size < 2) throw std::invalid_argument("sample_pairs: batch_size must be >= 2");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) {
        throw std::invalid_argument("sample_pairs: positive_fraction must lie in (0, 1)");
    }
    std::mt19937_64 rng(rng_seed);
    std::uniform_int_distribution<std::size_t> pick_id(0, ids.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_sample(0, dataset.samples_per_id() - 1);
    const Modality second = mode == PairMode::CrossModal ? Modality::Target : Modality::Source;

    const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(batch_size) * positive_fraction));
    struct Pair {
        SampleKey a, b;
        int y;
    };
    std::vector<Pair> pairs;
    pairs.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const bool positive = i < n_pos;
        const int id_a = ids[pick_id(rng)];
        int id_b = id_a;
        if (!positive) {
            while (id_b == id_a) id_b = ids[pick_id(rng)];
        }
        const std::size_t s_a = pick_sample(rng);
        std::size_t s_b = pick_sample(rng);
        if (positive && mode == PairMode::SourceOnly && dataset.samples_per_id() > 1) {
            while (s_b == s_a) s_b = pick_sample(rng);
        }
        pairs.push_back({{id_a, Modality::Source, s_a}, {id_b, second, s_b}, positive ? 1 : 0});
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);

    std::vector<SampleKey> first, other;
    PairBatch batch;
    for (const auto& p : pairs) {
        first.push_back(p.a);
        other.push_back(p.b);
        batch.y.push_back(p.y);
    }
    batch.x_source = dataset.images(first);
    batch.x_target = dataset.images(other);
    return batch;
}

ProtocolSplit make_folds(std::size_t n_ids, std::size_t n_folds, std::uint64_t seed) {
    if (n_folds < 1) throw std::invalid_argument("make_folds: n_folds must be >= 1");
    if (n_ids < 2 * n_folds) {
        throw std::invalid_argument("make_folds: need n_ids >= 2 * n_folds (" + std::to_string(n_ids) + " < " +
                                    std::to_string(2 * n_folds) + ")");
    }
    std::vector<int> perm(n_ids);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    ProtocolSplit split;
    if (n_folds == 1) {
        Fold f;
        f.train_ids.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_ids / 2));
        f.eval_ids.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_ids / 2), perm.end());
        std::sort(f.train_ids.begin(), f.train_ids.end());
        std::sort(f.eval_ids.begin(), f.eval_ids.end());
        split.folds.push_back(std::move(f));
        return split;
    }
    for (std::size_t k = 0; k < n_folds; ++k) {
        const std::size_t lo = k * n_ids / n_folds;
        const std::size_t hi = (k + 1) * n_ids / n_folds;
        Fold f;
        for (std::size_t i = 0; i < n_ids; ++i) {
            (i >= lo && i < hi ? f.eval_ids : f.train_ids).push_back(perm[i]);
        }
        std::sort(f.train_ids.begin(), f.train_ids.end());
        std::sort(f.eval_ids.begin(), f.eval_ids.end());
        split.folds.push_back(std::move(f));
    }
    return split;
}

void export_images(const Dataset& dataset, std::span<const SampleKey> keys, const std::filesystem::path& blob,
                   const std::filesystem::path& manifest) {
    std::ofstream out(blob, std::ios::binary);
    std::ofstream man(manifest);
    if (!out || !man) throw std::runtime_error("export_images: cannot open output files");
    man << "id,modality,sample,offset\n";
    std::uint64_t offset = 0;
    for (const auto& key : keys) {
        const Tensor img = dataset.image(key);
        man << key.id << ',' << modality_name(key.modality) << ',' << key.sample << ',' << offset << '\n';
        for (double v : img.data()) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                                   static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
            out.write(bytes, 4);
            offset += 4;
        }
    }
    if (!out || !man) throw std::runtime_error("export_images: write failed");
}

}  // namespace hfr::data
