#pragma once

// Dataset provisioning: synthetic cardiac-like phantom pairs with known
// deformations, preprocessing of real volumes, on-disk volume formats and the
// dataset manifest.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffreg/log.hpp"

#include "diffreg/errors.hpp"
#include "diffreg/grid.hpp"
#include "diffreg/volume.hpp"

namespace diffreg {

/// Label ids written by the phantom generator.
inline constexpr int64_t kLabelBloodPool = 1;
inline constexpr int64_t kLabelMyocardium = 2;
inline constexpr int64_t kLabelRightVentricle = 3;

struct PhantomSpec {
  Extent extent{64, 64};
  std::vector<double> spacing;  // defaults to 1 mm per axis
  /// Peak magnitude (voxels) of the stationary velocity field.
  double amplitude = 3.0;
  /// Gaussian width of the velocity field as a fraction of the smallest extent.
  double smoothness = 0.125;
  int64_t squaring_steps = 7;
  /// Amplitude of the smooth background texture.
  double texture = 0.08;
};

struct PhantomPair {
  Volume fixed;
  Volume moving;
  Volume fixed_labels;
  Volume moving_labels;
  DisplacementField ground_truth;  // moving = warp(fixed, ground_truth)
};

/// Deterministic per seed. Throws ConfigError for unusable extents.
PhantomPair generate_phantom_pair(uint64_t seed, const PhantomSpec& spec);

/// Stationary velocity field -> displacement by scaling and squaring.
/// `velocity` is (B, D, *spatial).
torch::Tensor integrate_velocity(const torch::Tensor& velocity, int64_t steps);

/// Separable Gaussian blur of a batched tensor with replicate borders.
torch::Tensor gaussian_smooth(const torch::Tensor& batched, double sigma);

/// Resamples to `target_spacing` with multilinear (or nearest) interpolation;
/// new voxel j along axis k sits at old coordinate j * target_k / spacing_k.
Volume resample_to_spacing(const Volume& volume, const std::vector<double>& target_spacing,
                           grid::Interpolation mode = grid::Interpolation::Linear);

/// Centre crop / pad to `extent`. Pads with `fill`.
Volume crop_or_pad(const Volume& volume, const Extent& extent, double fill);

/// Min-max maps intensities to [-1, 1]; constant volumes map to -1.
Volume normalize_intensity(const Volume& volume);

/// Resample, centre crop/pad, then min-max normalise. Label volumes use
/// nearest-neighbour resampling, pad with 0 and skip normalisation.
Volume preprocess_volume(const Volume& raw, const std::vector<double>& target_spacing,
                         const Extent& target_extent);

/// Raw little-endian float32 array `<base>.raw` plus a JSON sidecar
/// `<base>.json` holding extent, spacing, channels, dtype and label flag.
void write_raw_volume(const std::filesystem::path& base, const Volume& volume);
Volume read_raw_volume(const std::filesystem::path& base);

/// Single-file NIfTI-1 (.nii or .nii.gz). `frame` selects the time point of
/// 4D files.
Volume read_nifti(const std::filesystem::path& path, int64_t frame = 0);
void write_nifti(const std::filesystem::path& path, const Volume& volume);

/// Reads either format: NIfTI by extension, otherwise the raw+sidecar pair.
Volume read_volume(const std::filesystem::path& path);

/// Pair used for training and evaluation.
struct PairData {
  std::string id;
  Volume fixed;
  Volume moving;
  std::optional<Volume> fixed_labels;
  std::optional<Volume> moving_labels;
  std::optional<DisplacementField> ground_truth;
};

struct Dataset {
  std::vector<PairData> pairs;
  std::vector<int64_t> class_ids;
  Extent extent;
};

struct GeneratorOptions {
  PhantomSpec phantom;
  int64_t pairs = 100;
  uint64_t seed = 0;
};

/// Writes `manifest.json` plus one raw volume set per pair under `out_dir`.
/// Refuses a non-empty `out_dir` unless `force`.
Dataset generate_dataset(const std::filesystem::path& out_dir, const GeneratorOptions& options,
                         bool force = false);

/// Generates the same pairs in memory without touching the disk.
Dataset generate_dataset(const GeneratorOptions& options);

/// Loads a manifest. Entries may reference cached raw volumes, NIfTI files
/// (preprocessed with the manifest's `preprocess` block) or bare generator
/// seeds.
Dataset load_dataset(const std::filesystem::path& manifest);

/// Per-pair seed used by the generator for pair `index` of a dataset seed.
uint64_t pair_seed(uint64_t dataset_seed, int64_t index);

/// Seeded shuffle then split; the training part gets round(n * fraction)
/// items, clamped to [1, n].
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_dataset(const std::vector<T>& items,
                                                        double train_fraction,
                                                        uint64_t seed = 0) {
  if (items.empty()) throw DomainError("cannot split an empty dataset");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("must lie in (0, 1]", "train_fraction");
  }
  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(seed);
  for (size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  auto n_train = static_cast<size_t>(std::llround(static_cast<double>(items.size()) * train_fraction));
  n_train = std::clamp<size_t>(n_train, 1, items.size());
  if (n_train == items.size()) {
    log::warn("split leaves no held-out items ({} total)", items.size());
  }
  std::pair<std::vector<T>, std::vector<T>> out;
  for (size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(items[order[i]]);
  }
  return out;
}

}  // namespace diffreg
