#pragma once

#include <cstdint>
#include <filesystem>

#include "gads/training.hpp"

namespace gads {

/// Checkpoint layout (little-endian): "GADSCP01" | u32 version | u32 d_cls |
/// u32 d_patch | u32 d_text | float64 tensors in order psi.weight, psi.bias,
/// head.weight, head.bias, phi1.weight, phi1.bias, phi2.weight, phi2.bias.
/// Matrices are row-major.
inline constexpr char kCheckpointMagic[8] = {'G', 'A', 'D', 'S', 'C', 'P', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const AdapterParams& params, const std::filesystem::path& path);
AdapterParams read_checkpoint(const std::filesystem::path& path);

}  // namespace gads
