#pragma once

// Feature-wise diffusion guidance: per-level linear cross-attention from the
// registration features (queries) to the group-normalised diffusion features
// (keys/values), and the multi-scale merge of the per-level fields.

#include <torch/torch.h>

#include <vector>

#include "diffreg/backbone.hpp"
#include "diffreg/volume.hpp"

namespace diffreg {

/// Efficient attention over flattened voxels: q, k are (B, Ck, N), v is
/// (B, Cv, N). Queries are softmax-normalised over channels, keys over
/// voxels, and the (Ck x Cv) global context softmax(k) v^T is applied to the
/// queries. Returns (B, Cv, N) in O(N) time and memory.
torch::Tensor efficient_cross_attention(const torch::Tensor& q, const torch::Tensor& k,
                                        const torch::Tensor& v);

/// Estimates the displacement field of one decoder level:
///   phi_i = Conv(F_R + Proj(attention(Q(F_R), K(GN(F_G)), V(GN(F_G)))))
/// The value and output projections carry no bias, so an all-zero F_G
/// contributes nothing and phi_i reduces to Conv(F_R). The final convolution
/// starts at zero (identity deformation).
class LevelFieldHeadImpl : public torch::nn::Module {
 public:
  LevelFieldHeadImpl(int64_t dims, int64_t reg_channels, int64_t diff_channels, int64_t groups);

  torch::Tensor forward(const torch::Tensor& reg, const torch::Tensor& diff);
  /// Residual attended features before the final convolution.
  torch::Tensor attend(const torch::Tensor& reg, const torch::Tensor& diff);

  torch::nn::GroupNorm norm{nullptr};
  Conv query{nullptr}, key{nullptr}, value{nullptr}, proj{nullptr}, out{nullptr};
};
TORCH_MODULE(LevelFieldHead);

/// Upsamples every level field to `full_extent` (multilinear), multiplies
/// component k by the upsampling factor along axis k so values stay in
/// full-resolution voxels, and averages with equal weights. Fields are
/// (B, D, *spatial_i); each extent must divide `full_extent` by a power of two.
torch::Tensor merge_fields(const std::vector<torch::Tensor>& fields, const Extent& full_extent);

}  // namespace diffreg
