#include "diffreg/model.hpp"

#include "diffreg/errors.hpp"

namespace diffreg {

RegistrationNetImpl::RegistrationNetImpl(const BackboneConfig& cfg, Architecture arch)
    : cfg_(cfg), arch_(arch) {
  backbone = register_module("backbone", Backbone(cfg, arch == Architecture::Full));
  if (arch == Architecture::Full) {
    for (int64_t i = 0; i < cfg.levels; ++i) {
      heads->push_back(LevelFieldHead(cfg.spatial_dims, cfg.channels(i), cfg.channels(i),
                                      cfg.groupnorm_groups));
    }
  } else {
    Conv head(cfg.spatial_dims, cfg.channels(cfg.levels - 1), cfg.spatial_dims, 3);
    head->zero_();
    heads->push_back(head);
  }
  register_module("heads", heads);
}

ForwardResult RegistrationNetImpl::forward(const torch::Tensor& fixed, const torch::Tensor& moving,
                                           const torch::Tensor& x_t, const torch::Tensor& steps) {
  if (!fixed.sizes().equals(moving.sizes()) || !fixed.sizes().equals(x_t.sizes()) ||
      fixed.dim() != cfg_.spatial_dims + 2 || fixed.size(1) != 1) {
    throw ShapeError("fixed, moving and x_t must be (B, 1, *spatial) with equal extents");
  }
  ForwardResult out;
  const auto enc = backbone->encode(torch::cat({fixed, moving, x_t}, 1), steps);
  auto diffusion = backbone->decode_diffusion(enc);
  out.score = diffusion.score;
  out.diffusion_features = std::move(diffusion.features);
  const FeaturePyramid no_guidance;
  out.registration_features = backbone->decode_registration(
      enc, arch_ == Architecture::Full ? out.diffusion_features : no_guidance);

  if (arch_ == Architecture::Full) {
    for (size_t i = 0; i < out.registration_features.size(); ++i) {
      out.level_fields.push_back(heads[i]->as<LevelFieldHead>()->forward(
          out.registration_features[i], out.diffusion_features[i]));
    }
  } else {
    out.level_fields.push_back(
        heads[0]->as<Conv>()->forward(out.registration_features.back()));
  }
  out.phi = merge_fields(out.level_fields, spatial_extent(fixed));
  return out;
}

}  // namespace diffreg
