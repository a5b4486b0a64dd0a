#include <cmath>
#include <random>

#include "diffreg/data.hpp"

namespace diffreg {
namespace {

namespace F = torch::nn::functional;

torch::Tensor normal_noise(std::mt19937_64& rng, std::vector<int64_t> shape) {
  auto t = torch::empty(shape, torch::kFloat64);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto* p = t.data_ptr<double>();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = normal(rng);
  return t;
}

/// Normalised coordinate of every voxel along `axis`, in [-1, 1].
torch::Tensor axis_coordinate(const Extent& extent, size_t axis) {
  const auto n = extent[axis];
  const double half = n > 1 ? 0.5 * static_cast<double>(n - 1) : 1.0;
  std::vector<int64_t> shape(extent.size(), 1);
  shape[axis] = n;
  return ((torch::arange(n, torch::kFloat64) - 0.5 * static_cast<double>(n - 1)) / half)
      .reshape(shape)
      .expand(extent);
}

/// Scaled distance of every voxel from `center`.
torch::Tensor ellipse_distance(const Extent& extent, const std::vector<double>& center,
                               const std::vector<double>& scale) {
  auto d = torch::zeros(extent, torch::kFloat64);
  for (size_t k = 0; k < extent.size(); ++k) {
    d = d + ((axis_coordinate(extent, k) - center[k]) / scale[k]).pow(2);
  }
  return d.sqrt();
}

/// Band-limited noise: white noise drawn on a grid padded by the kernel
/// radius, blurred, then cropped so the border is as random as the interior.
torch::Tensor smooth_noise(std::mt19937_64& rng, int64_t channels, const Extent& extent,
                           double sigma) {
  const auto radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  std::vector<int64_t> shape{1, channels};
  for (auto e : extent) shape.push_back(e + 2 * radius);
  auto noise = gaussian_smooth(normal_noise(rng, shape), sigma);
  for (size_t k = 0; k < extent.size(); ++k) {
    noise = noise.narrow(static_cast<int64_t>(k) + 2, radius, extent[k]);
  }
  auto out = noise.contiguous();
  return out / out.abs().max().clamp_min(1e-12);
}

}  // namespace

torch::Tensor gaussian_smooth(const torch::Tensor& batched, double sigma) {
  if (sigma <= 0.0) return batched;
  const int64_t dims = batched.dim() - 2;
  const auto radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  auto taps = torch::arange(-radius, radius + 1, batched.options());
  auto kernel = torch::exp(-0.5 * (taps / sigma).pow(2));
  kernel = kernel / kernel.sum();

  std::vector<int64_t> flat_shape = batched.sizes().vec();
  flat_shape[0] = batched.size(0) * batched.size(1);
  flat_shape[1] = 1;
  auto x = batched.reshape(flat_shape);
  for (int64_t axis = 0; axis < dims; ++axis) {
    std::vector<int64_t> kshape(static_cast<size_t>(dims + 2), 1);
    kshape[axis + 2] = 2 * radius + 1;
    // F::pad lists (before, after) pairs starting from the last axis.
    std::vector<int64_t> pad(static_cast<size_t>(2 * dims), 0);
    pad[2 * (dims - 1 - axis)] = radius;
    pad[2 * (dims - 1 - axis) + 1] = radius;
    auto padded = F::pad(x, F::PadFuncOptions(pad).mode(torch::kReplicate));
    auto k = kernel.reshape(kshape);
    x = dims == 2 ? torch::conv2d(padded, k) : torch::conv3d(padded, k);
  }
  return x.reshape(batched.sizes());
}

torch::Tensor integrate_velocity(const torch::Tensor& velocity, int64_t steps) {
  auto disp = velocity / std::pow(2.0, static_cast<double>(steps));
  for (int64_t i = 0; i < steps; ++i) disp = disp + grid::warp(disp, disp);
  return disp;
}

PhantomPair generate_phantom_pair(uint64_t seed, const PhantomSpec& spec) {
  const auto& extent = spec.extent;
  const auto dims = extent.size();
  if (dims != 2 && dims != 3) throw ConfigError("must have 2 or 3 axes", "extent");
  for (auto e : extent) {
    if (e < 8) throw ConfigError("every axis needs at least 8 voxels", "extent");
  }
  if (spec.amplitude < 0.0 || !std::isfinite(spec.amplitude)) {
    throw ConfigError("must be a finite value >= 0", "amplitude");
  }
  if (spec.squaring_steps < 0) throw ConfigError("must be >= 0", "squaring_steps");
  std::vector<double> spacing = spec.spacing.empty() ? std::vector<double>(dims, 1.0)
                                                     : spec.spacing;

  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  // Left ventricle blood pool inside a myocardial ring, right ventricle to one
  // side, all inside a body outline.
  std::vector<double> lv_center(dims), lv_scale(dims), rv_center(dims), rv_scale(dims),
      body_scale(dims);
  for (size_t k = 0; k < dims; ++k) {
    lv_center[k] = uniform(-0.12, 0.12);
    lv_scale[k] = uniform(0.85, 1.15);
    rv_scale[k] = uniform(0.9, 1.3);
    body_scale[k] = uniform(0.85, 0.95);
  }
  const double lv_radius = uniform(0.2, 0.28);
  const double thickness = uniform(0.08, 0.12);
  const double rv_radius = uniform(0.18, 0.24);
  const double side = uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
  rv_center = lv_center;
  rv_center[dims - 1] += side * (lv_radius + thickness + 0.6 * rv_radius) * lv_scale[dims - 1];
  rv_center[dims - 2] += uniform(-0.08, 0.08);

  const auto lv_d = ellipse_distance(extent, lv_center, lv_scale);
  const auto rv_d = ellipse_distance(extent, rv_center, rv_scale);
  const auto body_d = ellipse_distance(extent, std::vector<double>(dims, 0.0), body_scale);

  const auto blood = lv_d < lv_radius;
  const auto myo = (lv_d >= lv_radius) & (lv_d < lv_radius + thickness);
  const auto rv = (rv_d < rv_radius) & ~blood & ~myo;

  auto labels = torch::zeros(extent, torch::kFloat64);
  labels.masked_fill_(blood, static_cast<double>(kLabelBloodPool));
  labels.masked_fill_(myo, static_cast<double>(kLabelMyocardium));
  labels.masked_fill_(rv, static_cast<double>(kLabelRightVentricle));

  auto image = torch::full(extent, -0.9, torch::kFloat64);
  image.masked_fill_(body_d < 1.0, -0.45);
  image.masked_fill_(blood, 0.75);
  image.masked_fill_(myo, -0.05);
  image.masked_fill_(rv, 0.55);

  std::vector<int64_t> batched_shape{1, 1};
  batched_shape.insert(batched_shape.end(), extent.begin(), extent.end());
  const double min_extent = static_cast<double>(*std::min_element(extent.begin(), extent.end()));
  auto texture = smooth_noise(rng, 1, extent, min_extent / 16.0);
  image = gaussian_smooth(image.reshape(batched_shape) + spec.texture * texture, 0.6)
              .clamp(-1.0, 1.0);

  auto velocity = spec.amplitude *
                  smooth_noise(rng, static_cast<int64_t>(dims), extent, spec.smoothness * min_extent);
  auto disp = integrate_velocity(velocity, spec.squaring_steps);

  auto fixed_labels = labels.reshape(batched_shape);
  auto moving = grid::warp(image, disp);
  auto moving_labels = grid::warp(fixed_labels, disp, grid::Interpolation::Nearest);

  auto to_volume = [&](const torch::Tensor& t, bool label) {
    return Volume::make(t.squeeze(0).to(torch::kFloat32), spacing, label);
  };
  return PhantomPair{to_volume(image, false), to_volume(moving, false),
                     to_volume(fixed_labels, true), to_volume(moving_labels, true),
                     DisplacementField::make(disp.squeeze(0).to(torch::kFloat32))};
}

}  // namespace diffreg
