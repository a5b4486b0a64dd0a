#include "diffreg/fdg.hpp"

#include "diffreg/errors.hpp"
#include "diffreg/grid.hpp"

namespace diffreg {

torch::Tensor efficient_cross_attention(const torch::Tensor& q, const torch::Tensor& k,
                                        const torch::Tensor& v) {
  if (q.dim() != 3 || k.dim() != 3 || v.dim() != 3 || !q.sizes().equals(k.sizes()) ||
      v.size(0) != q.size(0) || v.size(2) != q.size(2)) {
    throw ShapeError("attention operands must be (B, C, N) with matching B and N");
  }
  auto keys = torch::softmax(k, 2);
  auto queries = torch::softmax(q, 1);
  auto context = torch::bmm(keys, v.transpose(1, 2));    // (B, Ck, Cv)
  return torch::bmm(context.transpose(1, 2), queries);  // (B, Cv, N)
}

LevelFieldHeadImpl::LevelFieldHeadImpl(int64_t dims, int64_t reg_channels,
                                       int64_t diff_channels, int64_t groups) {
  norm = register_module(
      "norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, diff_channels)));
  query = register_module("query", Conv(dims, reg_channels, reg_channels, 1));
  key = register_module("key", Conv(dims, diff_channels, reg_channels, 1));
  value = register_module("value", Conv(dims, diff_channels, reg_channels, 1, 1, false));
  proj = register_module("proj", Conv(dims, reg_channels, reg_channels, 1, 1, false));
  out = register_module("out", Conv(dims, reg_channels, dims, 3));
  out->zero_();
}

torch::Tensor LevelFieldHeadImpl::attend(const torch::Tensor& reg, const torch::Tensor& diff) {
  if (reg.dim() != diff.dim() || reg.size(0) != diff.size(0) ||
      spatial_extent(reg) != spatial_extent(diff)) {
    throw ShapeError("level features disagree: registration " +
                     format_extent(reg.sizes().vec()) + ", diffusion " +
                     format_extent(diff.sizes().vec()));
  }
  const int64_t batch = reg.size(0);
  auto g = norm(diff);
  auto flat = [batch](const torch::Tensor& t) { return t.reshape({batch, t.size(1), -1}); };
  auto attended = efficient_cross_attention(flat(query(reg)), flat(key(g)), flat(value(g)));
  return reg + proj(attended.reshape(reg.sizes()));
}

torch::Tensor LevelFieldHeadImpl::forward(const torch::Tensor& reg, const torch::Tensor& diff) {
  return out(attend(reg, diff));
}

torch::Tensor merge_fields(const std::vector<torch::Tensor>& fields, const Extent& full_extent) {
  if (fields.empty()) throw DomainError("merge_fields needs at least one field");
  torch::Tensor sum;
  for (const auto& field : fields) {
    const Extent extent = spatial_extent(field);
    if (extent.size() != full_extent.size() ||
        field.size(1) != static_cast<int64_t>(full_extent.size())) {
      throw ShapeError("field " + format_extent(field.sizes().vec()) +
                       " does not match target " + format_extent(full_extent));
    }
    std::vector<int64_t> scale_shape(static_cast<size_t>(field.dim()), 1);
    scale_shape[1] = field.size(1);
    std::vector<double> factors;
    for (size_t k = 0; k < extent.size(); ++k) {
      const int64_t ratio = extent[k] > 0 ? full_extent[k] / extent[k] : 0;
      if (ratio < 1 || ratio * extent[k] != full_extent[k] || (ratio & (ratio - 1)) != 0) {
        throw ShapeError("field extent " + format_extent(extent) +
                         " is not a pyramid level of " + format_extent(full_extent));
      }
      factors.push_back(static_cast<double>(ratio));
    }
    auto scale = torch::tensor(factors, field.options()).reshape(scale_shape);
    auto up = grid::resize(field, full_extent) * scale;
    sum = sum.defined() ? sum + up : up;
  }
  return sum / static_cast<double>(fields.size());
}

}  // namespace diffreg
