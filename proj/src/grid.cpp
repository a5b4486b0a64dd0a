#include "diffreg/grid.hpp"

#include "diffreg/errors.hpp"

namespace diffreg::grid {
namespace {

int64_t checked_field_dims(const torch::Tensor& disp) {
  const int64_t dims = disp.dim() - 2;
  if (dims != 2 && dims != 3) {
    throw ShapeError("displacement field must be (B, D, *spatial) with D in {2,3}");
  }
  if (disp.size(1) != dims) {
    throw ShapeError("displacement field has " + std::to_string(disp.size(1)) +
                     " components for " + std::to_string(dims) + " axes");
  }
  return dims;
}

void require_differentiable_extent(const torch::Tensor& disp) {
  for (int64_t e : spatial_extent(disp)) {
    if (e < 2) throw DomainError("finite differences need extent >= 2 on every axis");
  }
}

}  // namespace

torch::Tensor warp(const torch::Tensor& image, const torch::Tensor& disp,
                   Interpolation mode) {
  const int64_t dims = checked_field_dims(disp);
  if (image.dim() != disp.dim() || image.size(0) != disp.size(0) ||
      spatial_extent(image) != spatial_extent(disp)) {
    throw ShapeError("warp: image " + format_extent(image.sizes().vec()) +
                     " and field " + format_extent(disp.sizes().vec()) +
                     " disagree");
  }
  if (!torch::isfinite(disp).all().item<bool>()) {
    throw DomainError("warp: displacement field contains non-finite values");
  }

  const Extent extent = spatial_extent(image);
  const int64_t batch = image.size(0);
  const int64_t channels = image.size(1);
  int64_t voxels = 1;
  for (auto e : extent) voxels *= e;

  std::vector<int64_t> strides(dims, 1);
  for (int64_t k = dims - 2; k >= 0; --k) strides[k] = strides[k + 1] * extent[k + 1];

  const auto opts = disp.options();
  const auto flat_image = image.reshape({batch, channels, voxels});
  auto gather = [&](const torch::Tensor& index) {
    return flat_image.gather(2, index.unsqueeze(1).expand({batch, channels, voxels}));
  };

  std::vector<torch::Tensor> coords(dims);
  for (int64_t k = 0; k < dims; ++k) {
    std::vector<int64_t> shape(dims, 1);
    shape[k] = extent[k];
    auto base = torch::arange(extent[k], opts).reshape(shape);
    coords[k] = (disp.select(1, k) + base)
                    .reshape({batch, voxels})
                    .clamp(0.0, static_cast<double>(extent[k] - 1));
  }

  if (mode == Interpolation::Nearest) {
    auto index = torch::zeros({batch, voxels}, torch::kLong);
    for (int64_t k = 0; k < dims; ++k) {
      index = index + torch::round(coords[k]).to(torch::kLong) * strides[k];
    }
    return gather(index).reshape(image.sizes());
  }

  std::vector<torch::Tensor> lower(dims), upper(dims), frac(dims);
  for (int64_t k = 0; k < dims; ++k) {
    auto floor = torch::floor(coords[k]).detach();
    lower[k] = floor.to(torch::kLong);
    upper[k] = torch::clamp_max(lower[k] + 1, extent[k] - 1);
    frac[k] = coords[k] - floor;
  }

  torch::Tensor out;
  for (int64_t corner = 0; corner < (int64_t{1} << dims); ++corner) {
    torch::Tensor weight;
    auto index = torch::zeros({batch, voxels}, torch::kLong);
    for (int64_t k = 0; k < dims; ++k) {
      const bool high = (corner >> (dims - 1 - k)) & 1;
      auto w = high ? frac[k] : 1.0 - frac[k];
      weight = weight.defined() ? weight * w : w;
      index = index + (high ? upper[k] : lower[k]) * strides[k];
    }
    auto term = gather(index) * weight.unsqueeze(1);
    out = out.defined() ? out + term : term;
  }
  return out.reshape(image.sizes());
}

Volume warp(const Volume& image, const DisplacementField& disp,
            Interpolation mode) {
  auto out = warp(image.batched(), disp.batched().to(image.data.scalar_type()), mode);
  return Volume{out.squeeze(0), image.spacing, image.is_label};
}

torch::Tensor spatial_gradient(const torch::Tensor& disp) {
  const int64_t dims = checked_field_dims(disp);
  require_differentiable_extent(disp);
  std::vector<torch::Tensor> per_axis;
  per_axis.reserve(dims);
  for (int64_t axis = 0; axis < dims; ++axis) {
    const int64_t d = axis + 2;
    const int64_t n = disp.size(d);
    auto diff = disp.narrow(d, 1, n - 1) - disp.narrow(d, 0, n - 1);
    per_axis.push_back(torch::cat({diff, diff.narrow(d, n - 2, 1)}, d));
  }
  return torch::stack(per_axis, 2);
}

torch::Tensor smoothness_penalty(const torch::Tensor& disp) {
  return spatial_gradient(disp).pow(2).sum({1, 2}).mean();
}

torch::Tensor jacobian_determinant(const torch::Tensor& disp) {
  const auto g = spatial_gradient(disp);
  auto j = [&](int64_t r, int64_t c) {
    auto e = g.select(1, r).select(1, c);
    return r == c ? e + 1.0 : e;
  };
  if (disp.size(1) == 2) return j(0, 0) * j(1, 1) - j(0, 1) * j(1, 0);
  return j(0, 0) * (j(1, 1) * j(2, 2) - j(1, 2) * j(2, 1)) -
         j(0, 1) * (j(1, 0) * j(2, 2) - j(1, 2) * j(2, 0)) +
         j(0, 2) * (j(1, 0) * j(2, 1) - j(1, 1) * j(2, 0));
}

Volume jacobian_determinant(const DisplacementField& disp) {
  return Volume::make(jacobian_determinant(disp.batched()));
}

torch::Tensor resize(const torch::Tensor& batched, const Extent& extent) {
  namespace F = torch::nn::functional;
  if (spatial_extent(batched) == extent) return batched;
  auto opts = F::InterpolateFuncOptions().size(extent).align_corners(false);
  if (extent.size() == 2) {
    opts.mode(torch::kBilinear);
  } else {
    opts.mode(torch::kTrilinear);
  }
  return F::interpolate(batched, opts);
}

}  // namespace diffreg::grid
