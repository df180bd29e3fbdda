#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pseudolab/model.hpp"

// Versioned little-endian model container; byte layout in docs/checkpoint.md.
namespace pseudolab::checkpoint {

inline constexpr char kMagic[8] = {'P', 'S', 'L', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

std::vector<std::uint8_t> serialize(const Model& model);
// Throws FormatError naming the field that failed to decode.
Model deserialize(std::span<const std::uint8_t> bytes);

void save(const Model& model, const std::filesystem::path& path);
Model load(const std::filesystem::path& path);

}  // namespace pseudolab::checkpoint
