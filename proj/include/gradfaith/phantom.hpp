#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "gradfaith/metrics.hpp"

namespace gradfaith {

// Class labels for the three-way task.
inline constexpr int kNormal = 0;
inline constexpr int kBenign = 1;
inline constexpr int kMalignant = 2;
inline constexpr const char* kClassNames[3] = {"Normal", "Benign", "Malignant"};

struct Sample {
  Grid image;       // HxW grayscale in [0,1]
  int label = 0;    // 0 Normal, 1 Benign, 2 Malignant
  BinaryMask mask;  // exact lesion support; empty for Normal
  int id = 0;
};

struct PhantomConfig {
  int size = 64;  // square images
  double benign_radius_min = 3.0, benign_radius_max = 5.0;
  double malignant_radius_min = 6.0, malignant_radius_max = 10.0;
  double spiculation = 0.2;  // radial boundary amplitude for malignant lesions
  double contrast = 0.35;    // lesion intensity above the lung field
  double noise_sigma = 0.05;
  int per_class = 100;
};

struct DatasetSplit {
  std::vector<int> train, val, test;
};

/// True if pixel coordinate (x, y) lies inside either lung-field ellipse.
bool in_lung_field(const PhantomConfig&, double x, double y);
BinaryMask lung_field_mask(const PhantomConfig&);

/// Deterministic synthetic chest slices: a bright thorax disc, two dark
/// lung ellipses, and for non-Normal classes one lesion with its exact
/// pixel mask. Benign lesions are smooth discs; malignant ones are larger
/// with a sinusoidal boundary perturbation. Gaussian noise is added last
/// and clamped to [0,1]. Gen is a pure function of (config, seed).
std::vector<Sample> generate(const PhantomConfig&, std::uint64_t seed);

/// Per-class shuffled partition with largest-remainder rounding; each
/// class's split sizes are within one sample of the exact ratios.
DatasetSplit split(const std::vector<Sample>&, std::array<double, 3> ratios, std::uint64_t seed);
inline DatasetSplit split(const std::vector<Sample>& s, std::uint64_t seed) {
  return split(s, {0.6, 0.2, 0.2}, seed);
}

// GFDS dataset container; round-trips bitwise.
void save_dataset(const std::vector<Sample>&, const std::filesystem::path&);
std::vector<Sample> load_dataset(const std::filesystem::path&);

/// Ingest a directory of binary PGM files described by a manifest of
/// `filename,label[,maskfile]` lines. Images must match the expected size;
/// samples without a mask file get an empty mask. Per-file failures are
/// collected rather than aborting the whole ingest.
struct IngestReport {
  std::vector<Sample> samples;
  std::vector<std::string> errors;  // one message per rejected manifest line
};
IngestReport load_grayscale_dir(const std::filesystem::path& dir, int expected_size,
                                const std::filesystem::path& manifest);

/// Model-facing view of an image as a [1,H,W] tensor.
Tensor to_tensor(const Grid& image);

}  // namespace gradfaith
