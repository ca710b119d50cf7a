#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cavity/volume.hpp"

namespace cavity {

// Synthetic pre/post pair of a bone block with pneumatized air cells, from
// which a random-walk cavity is removed in the post scan. Every field below
// is echoed in the phantom JSON sidecar.
struct PhantomSpec {
  Dims dims{32, 32, 32};
  std::uint64_t seed = 0;

  double bone_level = 0.8;
  double tissue_level = 0.3;  // outside the bone block

  int air_cell_count = 40;
  double air_cell_radius_min = 1.0;
  double air_cell_radius_max = 2.0;
  double air_level = 0.05;

  int cavity_steps_min = 10;
  int cavity_steps_max = 30;
  double cavity_radius_min = 3.0;
  double cavity_radius_max = 6.0;
  double cavity_fill_level = 0.1;

  double noise_sigma = 0.03;
  int streak_count = 3;
  double streak_level = 1.0;
  double streak_width = 1.0;
  double bias_amplitude = 0.2;

  void validate() const;

  // Same geometry with noise, streaks and bias switched off.
  PhantomSpec noiseless() const;
};

struct BoneBlock {
  std::size_t lo[3];
  std::size_t hi[3];  // exclusive

  bool contains(std::size_t x, std::size_t y, std::size_t z) const {
    return x >= lo[0] && x < hi[0] && y >= lo[1] && y < hi[1] && z >= lo[2] && z < hi[2];
  }
};

BoneBlock bone_block(const Dims& d);

struct PhantomPair {
  Volume preop;
  Volume postop;
  BinaryMask gt_mask;
  PhantomSpec spec;
};

class PhantomError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PhantomPair generate_phantom(const PhantomSpec& spec);

struct CorruptionSpec {
  // Positive dilates, negative erodes (6-neighbourhood rounds). Unset draws
  // +1 or -1 from the seed.
  std::optional<int> morph_radius;
  double flip_rate = 0.1;
  int blob_count = 2;
  double blob_radius = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
};

BinaryMask corrupt_mask(const BinaryMask& mask, const CorruptionSpec& c);

BinaryMask dilate6(const BinaryMask& m, int rounds);
BinaryMask erode6(const BinaryMask& m, int rounds);

// Four channels: raw, Gaussian-smoothed (sigma 1.5), gradient magnitude,
// local variance.
std::vector<Volume> voxel_features(const Volume& v);

struct FlipAxes {
  bool x = false;
  bool y = false;
  bool z = false;
};

std::pair<Volume, BinaryMask> flip_augment(const Volume& v, const BinaryMask& mask, FlipAxes axes);

}  // namespace cavity
