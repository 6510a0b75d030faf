#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "hfr/net/backbone.hpp"

namespace hfr::cli {

class WeightsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kWeightsMagic[4] = {'X', 'E', 'F', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

/// Layout: magic, u32 version, u32 tensor count, then per tensor u32 name
/// length, name bytes, u8 group, u32 rank, u32 dims, float32 values. All
/// integers and floats are little-endian.
std::vector<std::uint8_t> serialize(const net::Model& model);

/// Rebuilds `config`'s topology and fills it from `bytes`. Names, groups,
/// shapes and order must match exactly. Every parameter comes back frozen.
net::Model deserialize(const std::vector<std::uint8_t>& bytes, const net::BackboneConfig& config);

/// Writes through a temporary file and renames it into place.
void save_weights(const net::Model& model, const std::filesystem::path& path);
net::Model load_weights(const std::filesystem::path& path, const net::BackboneConfig& config);

/// Rounds every parameter to the nearest float32, matching what a save/load
/// round trip produces.
void round_to_float32(net::Model& model);

}  // namespace hfr::cli
