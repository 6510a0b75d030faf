#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "hfr/data/pair_batch.hpp"
#include "hfr/grad/tensor.hpp"

namespace hfr::data {

enum class Modality : std::uint8_t { Source = 0, Target = 1 };

std::string_view modality_name(Modality m);

inline constexpr std::size_t kLatentDim = 32;
inline constexpr std::size_t kImageSize = 32;

/// Identity latent; a pure function of (dataset_seed, id).
struct IdentitySpec {
    int id = 0;
    std::uint64_t dataset_seed = 0;
    std::vector<double> latent;
};

IdentitySpec make_identity(std::uint64_t dataset_seed, int id);

/// Noise-free rendering: 3 x S x S for Source, 1 x S x S for Target.
grad::Tensor render_clean(const IdentitySpec& identity, Modality modality, std::size_t size = kImageSize);

/// render_clean plus modality-specific noise keyed by
/// (dataset_seed, id, modality, sample_seed), clipped to [0, 1].
grad::Tensor render(const IdentitySpec& identity, Modality modality, std::uint64_t sample_seed,
                    std::size_t size = kImageSize);

struct SampleKey {
    int id = 0;
    Modality modality = Modality::Source;
    std::size_t sample = 0;

    bool operator==(const SampleKey&) const = default;
};

/// Immutable index of identities with every image pre-rendered. Images come
/// back as 3-channel tensors; target images are channel-replicated.
class Dataset {
public:
    Dataset(std::size_t n_ids, std::size_t samples_per_id, std::uint64_t dataset_seed,
            std::size_t image_size = kImageSize);

    std::size_t n_ids() const noexcept { return identities_.size(); }
    std::size_t samples_per_id() const noexcept { return samples_per_id_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t image_size() const noexcept { return image_size_; }
    /// n_ids * 2 * samples_per_id
    std::size_t size() const noexcept { return n_ids() * 2 * samples_per_id_; }

    const IdentitySpec& identity(int id) const;
    std::vector<SampleKey> enumerate() const;

    /// 3 x S x S image.
    grad::Tensor image(const SampleKey& key) const;
    /// N x 3 x S x S batch in key order.
    grad::Tensor images(std::span<const SampleKey> keys) const;

    /// Every sample of the given identities and modality, id-major.
    std::vector<SampleKey> keys_for(std::span<const int> ids, Modality modality) const;

private:
    std::span<const double> raw(const SampleKey& key) const;

    std::size_t samples_per_id_;
    std::uint64_t seed_;
    std::size_t image_size_;
    std::vector<IdentitySpec> identities_;
    std::vector<double> source_pixels_;  // id, sample, 3, S, S
    std::vector<double> target_pixels_;  // id, sample, 1, S, S
};

Dataset make_dataset(std::size_t n_ids, std::size_t samples_per_id, std::uint64_t dataset_seed);

enum class PairMode { CrossModal, SourceOnly };

/// Draws round(batch_size * positive_fraction) same-identity pairs and
/// different-identity pairs for the rest, from `ids`, then shuffles them.
/// CrossModal pairs a source image with a target image; SourceOnly pairs
/// two source images (distinct samples for positives when possible).
PairBatch sample_pairs(const Dataset& dataset, std::span<const int> ids, std::size_t batch_size,
                       double positive_fraction, std::uint64_t rng_seed, PairMode mode = PairMode::CrossModal);

struct Fold {
    std::vector<int> train_ids;
    std::vector<int> eval_ids;
};

struct ProtocolSplit {
    std::vector<Fold> folds;
};

/// Identity-disjoint k-fold split of 0..n_ids-1 after a seeded shuffle. With
/// a single fold the shuffled ids are split in half (train, eval).
ProtocolSplit make_folds(std::size_t n_ids, std::size_t n_folds, std::uint64_t seed);

/// Writes the images as little-endian float32 to `blob` and a CSV manifest
/// (id,modality,sample,offset) with byte offsets to `manifest`.
void export_images(const Dataset& dataset, std::span<const SampleKey> keys, const std::filesystem::path& blob,
                   const std::filesystem::path& manifest);

/// splitmix64 finalizer used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace hfr::data
