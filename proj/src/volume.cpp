#include "diffreg/volume.hpp"

#include <sstream>

#include "diffreg/errors.hpp"

namespace diffreg {

Volume Volume::make(torch::Tensor data, std::vector<double> spacing,
                    bool is_label) {
  if (data.dim() != 3 && data.dim() != 4) {
    throw ShapeError("volume must be (C, y, x) or (C, z, y, x), got rank " +
                     std::to_string(data.dim()));
  }
  for (int64_t d = 0; d < data.dim(); ++d) {
    if (data.size(d) < 1) throw ShapeError("volume extents must be >= 1");
  }
  const auto dims = static_cast<size_t>(data.dim() - 1);
  if (spacing.empty()) spacing.assign(dims, 1.0);
  if (spacing.size() != dims) {
    throw ShapeError("spacing has " + std::to_string(spacing.size()) +
                     " entries for " + std::to_string(dims) + " spatial axes");
  }
  for (double s : spacing) {
    if (!(s > 0.0)) throw DomainError("spacing components must be > 0");
  }
  if (is_label && !torch::equal(data, torch::round(data))) {
    throw DomainError("label volume contains non-integer values");
  }
  return Volume{std::move(data), std::move(spacing), is_label};
}

Extent Volume::extent() const {
  auto sizes = data.sizes();
  return Extent(sizes.begin() + 1, sizes.end());
}

int64_t Volume::voxel_count() const {
  int64_t n = 1;
  for (auto e : extent()) n *= e;
  return n;
}

DisplacementField DisplacementField::make(torch::Tensor vectors) {
  const int64_t dims = vectors.dim() - 1;
  if (dims != 2 && dims != 3) {
    throw ShapeError("displacement field must be (D, y, x) or (D, z, y, x)");
  }
  if (vectors.size(0) != dims) {
    throw ShapeError("displacement field has " +
                     std::to_string(vectors.size(0)) + " components for " +
                     std::to_string(dims) + " spatial axes");
  }
  if (!torch::isfinite(vectors).all().item<bool>()) {
    throw DomainError("displacement field contains non-finite values");
  }
  return DisplacementField{std::move(vectors)};
}

DisplacementField DisplacementField::zeros(const Extent& extent,
                                           torch::ScalarType dtype) {
  std::vector<int64_t> shape{static_cast<int64_t>(extent.size())};
  shape.insert(shape.end(), extent.begin(), extent.end());
  return make(torch::zeros(shape, torch::TensorOptions().dtype(dtype)));
}

Extent DisplacementField::extent() const {
  auto sizes = vectors.sizes();
  return Extent(sizes.begin() + 1, sizes.end());
}

Extent spatial_extent(const torch::Tensor& batched) {
  auto sizes = batched.sizes();
  return Extent(sizes.begin() + 2, sizes.end());
}

std::string format_extent(const Extent& extent) {
  std::ostringstream out;
  for (size_t i = 0; i < extent.size(); ++i) out << (i ? "x" : "") << extent[i];
  return out.str();
}

}  // namespace diffreg
