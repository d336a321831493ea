#pragma once

#include <cstdint>
#include <vector>

#include "gads/features.hpp"

namespace gads {

/// Desk-scale synthetic data. Each class has a fixed per-layer patch pattern
/// and class-token mean; normal records add Gaussian noise, abnormal records
/// additionally push a square block of patches (and, proportionally, the class
/// token) along the abnormal text prototype direction.
struct SynthConfig {
  std::uint32_t classes = 3;
  std::uint32_t train_normals = 200;
  std::uint32_t train_abnormals = 50;
  std::uint32_t test_normals = 100;
  std::uint32_t test_abnormals = 50;
  std::uint32_t pool_normals = 10;  // per class, prompt source for inference
  std::uint32_t d_cls = 16;
  std::uint32_t d_patch = 16;
  std::uint32_t d_text = 16;
  std::uint32_t grid = 8;    // patch grid side
  std::uint32_t image = 32;  // image side in pixels
  std::uint32_t block = 4;   // planted anomaly side, in patches
  std::vector<std::uint32_t> layers{0, 1};
  double magnitude = 1.0;   // anomaly strength relative to the pattern norm
  double patch_noise = 0.3;
  double class_noise = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthData {
  FeatureSet train;
  FeatureSet test;
  FeatureSet pool;
  TextPrototypes protos;
};

SynthData generate_synthetic(const SynthConfig& config);

/// Pixels whose nearest patch (corner-aligned mapping) lies inside the block.
std::vector<std::uint8_t> block_mask(std::uint32_t grid, std::uint32_t image, std::uint32_t top, std::uint32_t left,
                                     std::uint32_t block);

}  // namespace gads
