#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace diffreg {

using Extent = std::vector<int64_t>;

/// Dense scalar grid (2D or 3D) with physical spacing.
///
/// `data` is laid out (channel, [z,] y, x). Spacing is in mm, one entry per
/// spatial axis in the same order as the tensor dimensions. Label volumes
/// hold integer-valued class ids stored in a floating tensor.
struct Volume {
  torch::Tensor data;
  std::vector<double> spacing;
  bool is_label = false;

  /// Validates the invariants (extents >= 1, spacing > 0, integral labels).
  static Volume make(torch::Tensor data, std::vector<double> spacing = {},
                     bool is_label = false);

  int64_t spatial_dims() const { return data.dim() - 1; }
  int64_t channels() const { return data.size(0); }
  Extent extent() const;
  int64_t voxel_count() const;

  /// (1, C, *spatial) view for the batched kernels.
  torch::Tensor batched() const { return data.unsqueeze(0); }
};

/// Per-voxel displacement vectors in voxel units: (D, [z,] y, x), where
/// component k displaces along spatial axis k.
struct DisplacementField {
  torch::Tensor vectors;

  static DisplacementField make(torch::Tensor vectors);
  static DisplacementField zeros(const Extent& extent,
                                 torch::ScalarType dtype = torch::kFloat32);

  int64_t spatial_dims() const { return vectors.size(0); }
  Extent extent() const;
  torch::Tensor batched() const { return vectors.unsqueeze(0); }
};

/// Spatial extent of a batched tensor (B, C, *spatial).
Extent spatial_extent(const torch::Tensor& batched);

std::string format_extent(const Extent& extent);

}  // namespace diffreg
