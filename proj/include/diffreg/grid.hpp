#pragma once

// Geometric kernels over batched tensors. Images are (B, C, *spatial) and
// displacement fields are (B, D, *spatial) with D in {2, 3}; displacement
// component k moves along spatial axis k, in voxel units. Everything here is
// built from differentiable tensor ops, so autograd reaches both the image
// and the field.

#include <torch/torch.h>

#include "diffreg/volume.hpp"

namespace diffreg::grid {

enum class Interpolation { Linear, Nearest };

/// Backward warp: out(x) = image(x + disp(x)). Sample coordinates outside the
/// grid are clamped to the border. Linear mode is multilinear (bi/trilinear).
torch::Tensor warp(const torch::Tensor& image, const torch::Tensor& disp,
                   Interpolation mode = Interpolation::Linear);

Volume warp(const Volume& image, const DisplacementField& disp,
            Interpolation mode = Interpolation::Linear);

/// Forward differences of every displacement component along every axis.
/// Returns (B, D, D, *spatial) where [b][i][j] = d disp_i / d x_j. The last
/// slice along each axis repeats the previous difference.
torch::Tensor spatial_gradient(const torch::Tensor& disp);

/// Mean over voxels of the squared Frobenius norm of the displacement
/// gradient.
torch::Tensor smoothness_penalty(const torch::Tensor& disp);

/// det(I + grad disp) per voxel, shape (B, *spatial).
torch::Tensor jacobian_determinant(const torch::Tensor& disp);

Volume jacobian_determinant(const DisplacementField& disp);

/// Multilinear resize of a batched tensor to `extent`, half-pixel aligned.
torch::Tensor resize(const torch::Tensor& batched, const Extent& extent);

}  // namespace diffreg::grid
