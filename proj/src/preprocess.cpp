#include <cmath>

#include "diffreg/data.hpp"

namespace diffreg {

Volume resample_to_spacing(const Volume& volume, const std::vector<double>& target_spacing,
                           grid::Interpolation mode) {
  const auto dims = static_cast<size_t>(volume.spatial_dims());
  if (target_spacing.size() != dims) {
    throw ShapeError("target spacing needs one entry per spatial axis");
  }
  for (size_t k = 0; k < dims; ++k) {
    if (!(target_spacing[k] > 0.0) || !(volume.spacing[k] > 0.0)) {
      throw DomainError("spacings must be positive");
    }
  }
  auto data = volume.data.to(torch::kFloat64);
  const auto source = volume.extent();
  for (size_t k = 0; k < dims; ++k) {
    const double step = target_spacing[k] / volume.spacing[k];
    const auto n_out = std::max<int64_t>(
        1, std::llround(static_cast<double>(source[k]) * volume.spacing[k] / target_spacing[k]));
    if (n_out == source[k] && step == 1.0) continue;
    const int64_t axis = static_cast<int64_t>(k) + 1;
    auto pos = (torch::arange(n_out, torch::kFloat64) * step)
                   .clamp(0.0, static_cast<double>(source[k] - 1));
    if (mode == grid::Interpolation::Nearest) {
      data = data.index_select(axis, torch::round(pos).to(torch::kLong));
      continue;
    }
    auto lo = torch::floor(pos);
    auto lo_i = lo.to(torch::kLong);
    auto hi_i = torch::clamp_max(lo_i + 1, source[k] - 1);
    std::vector<int64_t> wshape(static_cast<size_t>(data.dim()), 1);
    wshape[axis] = n_out;
    auto w = (pos - lo).reshape(wshape);
    data = data.index_select(axis, lo_i) * (1.0 - w) + data.index_select(axis, hi_i) * w;
  }
  return Volume::make(data.to(volume.data.scalar_type()), target_spacing, volume.is_label);
}

Volume crop_or_pad(const Volume& volume, const Extent& extent, double fill) {
  const auto dims = static_cast<size_t>(volume.spatial_dims());
  if (extent.size() != dims) throw ShapeError("target extent needs one entry per spatial axis");
  auto out = torch::full([&] {
    std::vector<int64_t> s{volume.channels()};
    s.insert(s.end(), extent.begin(), extent.end());
    return s;
  }(), fill, volume.data.options());

  auto src = volume.data;
  auto dst = out;
  const auto source = volume.extent();
  for (size_t k = 0; k < dims; ++k) {
    const int64_t axis = static_cast<int64_t>(k) + 1;
    const int64_t n = std::min(source[k], extent[k]);
    src = src.narrow(axis, (source[k] - n) / 2, n);
    dst = dst.narrow(axis, (extent[k] - n) / 2, n);
  }
  dst.copy_(src);
  return Volume::make(out, volume.spacing, volume.is_label);
}

Volume normalize_intensity(const Volume& volume) {
  const double lo = volume.data.min().item<double>();
  const double hi = volume.data.max().item<double>();
  if (!(hi > lo)) {
    return Volume::make(torch::full_like(volume.data, -1.0), volume.spacing, false);
  }
  auto scaled = ((volume.data - lo) * (2.0 / (hi - lo)) - 1.0).clamp(-1.0, 1.0);
  return Volume::make(scaled, volume.spacing, false);
}

Volume preprocess_volume(const Volume& raw, const std::vector<double>& target_spacing,
                         const Extent& target_extent) {
  if (raw.is_label) {
    auto resampled = resample_to_spacing(raw, target_spacing, grid::Interpolation::Nearest);
    return crop_or_pad(resampled, target_extent, 0.0);
  }
  auto resampled = resample_to_spacing(raw, target_spacing);
  auto fitted = crop_or_pad(resampled, target_extent, resampled.data.min().item<double>());
  return normalize_intensity(fitted);
}

}  // namespace diffreg
