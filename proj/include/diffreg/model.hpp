#pragma once

#include <torch/torch.h>

#include <vector>

#include "diffreg/backbone.hpp"
#include "diffreg/config.hpp"
#include "diffreg/fdg.hpp"

namespace diffreg {

/// Everything one forward pass produces.
struct ForwardResult {
  torch::Tensor score;                        // (B, 1, *spatial)
  FeaturePyramid diffusion_features;          // F_G
  FeaturePyramid registration_features;       // F_R
  std::vector<torch::Tensor> level_fields;    // phi_i, deepest first
  torch::Tensor phi;                          // (B, D, *spatial), voxel units
};

/// Dual-decoder registration network: one shared encoder feeding the
/// denoising decoder and the registration decoder, plus the field heads.
class RegistrationNetImpl : public torch::nn::Module {
 public:
  RegistrationNetImpl(const BackboneConfig& cfg, Architecture arch);

  /// fixed, moving and x_t are (B, 1, *spatial); `steps` is (B,).
  ForwardResult forward(const torch::Tensor& fixed, const torch::Tensor& moving,
                        const torch::Tensor& x_t, const torch::Tensor& steps);

  Architecture architecture() const { return arch_; }
  const BackboneConfig& config() const { return cfg_; }

  Backbone backbone{nullptr};
  /// One LevelFieldHead per level (full) or a single Conv (no_fdg).
  torch::nn::ModuleList heads;

 private:
  BackboneConfig cfg_;
  Architecture arch_;
};
TORCH_MODULE(RegistrationNet);

}  // namespace diffreg
