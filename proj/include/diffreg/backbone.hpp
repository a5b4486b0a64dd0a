#pragma once

// Shared encoder, denoising decoder and registration decoder. A compact
// DDPM-style UNet family: GroupNorm/SiLU residual blocks conditioned on a
// sinusoidal step embedding, strided-conv downsampling and nearest+conv
// upsampling. Works for 2D and 3D inputs with the same code path.

#include <torch/torch.h>

#include <vector>

#include "diffreg/volume.hpp"

namespace diffreg {

struct BackboneConfig {
  int64_t spatial_dims = 2;
  int64_t levels = 3;
  int64_t base_channels = 8;
  std::vector<int64_t> channel_multipliers{1, 2, 4};
  int64_t time_embed_dim = 32;
  int64_t groupnorm_groups = 4;

  /// Throws ConfigError naming the offending `backbone.*` field.
  void validate() const;
  /// Channel width at pyramid index `i` (0 = deepest, levels-1 = finest).
  int64_t channels(int64_t i) const;
  /// Throws ConfigError when `extent` is not divisible by 2^(levels-1).
  void check_extent(const Extent& extent) const;
};

/// Multi-resolution features, index 0 = deepest/coarsest, back() = finest.
using FeaturePyramid = std::vector<torch::Tensor>;

/// Convolution over 2 or 3 spatial dims with "same" padding for odd kernels.
class ConvImpl : public torch::nn::Module {
 public:
  ConvImpl(int64_t dims, int64_t in, int64_t out, int64_t kernel, int64_t stride = 1,
           bool with_bias = true);
  torch::Tensor forward(const torch::Tensor& x);
  /// Zero weights and bias (identity-at-init output heads).
  void zero_();

  torch::Tensor weight, bias;  // bias is undefined when built without one

 private:
  int64_t dims_, stride_, padding_;
};
TORCH_MODULE(Conv);

class TimeEmbeddingImpl : public torch::nn::Module {
 public:
  explicit TimeEmbeddingImpl(int64_t dim);
  /// `steps` is a (B,) tensor of diffusion steps; returns (B, out_dim()).
  torch::Tensor forward(const torch::Tensor& steps);
  int64_t out_dim() const { return 4 * dim_; }

 private:
  int64_t dim_;
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TimeEmbedding);

/// Sinusoidal encoding of (B,) steps into (B, dim).
torch::Tensor sinusoidal_embedding(const torch::Tensor& steps, int64_t dim);

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t dims, int64_t in, int64_t out, int64_t temb_dim, int64_t groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);
  int64_t in_channels() const { return in_; }

 private:
  int64_t in_, out_;
  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  Conv conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear temb_proj{nullptr};
};
TORCH_MODULE(ResBlock);

class UpsampleImpl : public torch::nn::Module {
 public:
  UpsampleImpl(int64_t dims, int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  Conv conv{nullptr};
};
TORCH_MODULE(Upsample);

/// Encoder output: bottleneck `z`, skip pyramid F_E and the step embedding
/// the decoders share.
struct Encoding {
  torch::Tensor z;
  FeaturePyramid skips;
  torch::Tensor temb;
};

struct DiffusionDecoding {
  torch::Tensor score;       // (B, 1, *spatial) noise prediction
  FeaturePyramid features;   // F_G
};

class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(const BackboneConfig& cfg, int64_t temb_dim);
  Encoding forward(const torch::Tensor& x, const torch::Tensor& temb);

 private:
  BackboneConfig cfg_;
  Conv in_conv{nullptr};
  torch::nn::ModuleList blocks, downs;
  ResBlock mid{nullptr};
};
TORCH_MODULE(Encoder);

class DiffusionDecoderImpl : public torch::nn::Module {
 public:
  DiffusionDecoderImpl(const BackboneConfig& cfg, int64_t temb_dim);
  DiffusionDecoding forward(const Encoding& enc);

 private:
  BackboneConfig cfg_;
  torch::nn::ModuleList blocks, ups;
  torch::nn::GroupNorm out_norm{nullptr};
  Conv out_conv{nullptr};
};
TORCH_MODULE(DiffusionDecoder);

/// Registration decoder. When `guided`, level i consumes
/// concat(prev, F_E^i, F_G^i); otherwise concat(prev, F_E^i). `prev` is z at
/// the deepest level and the upsampled previous output elsewhere.
class RegistrationDecoderImpl : public torch::nn::Module {
 public:
  RegistrationDecoderImpl(const BackboneConfig& cfg, int64_t temb_dim, bool guided);
  FeaturePyramid forward(const Encoding& enc, const FeaturePyramid& guidance);
  bool guided() const { return guided_; }
  /// Channel count entering block i.
  int64_t block_in_channels(int64_t i) const;

 private:
  BackboneConfig cfg_;
  bool guided_;
  torch::nn::ModuleList blocks, ups;
};
TORCH_MODULE(RegistrationDecoder);

/// E_beta + G_sigma + R_theta with one shared encoder.
class BackboneImpl : public torch::nn::Module {
 public:
  BackboneImpl(const BackboneConfig& cfg, bool guided);

  /// `x_in` is (B, 3, *spatial) = {fixed, moving, x_t}; `steps` is (B,).
  Encoding encode(const torch::Tensor& x_in, const torch::Tensor& steps);
  DiffusionDecoding decode_diffusion(const Encoding& enc);
  FeaturePyramid decode_registration(const Encoding& enc, const FeaturePyramid& guidance);

  const BackboneConfig& config() const { return cfg_; }
  Encoder encoder{nullptr};
  DiffusionDecoder diffusion_decoder{nullptr};
  RegistrationDecoder registration_decoder{nullptr};
  TimeEmbedding time_embedding{nullptr};

 private:
  BackboneConfig cfg_;
};
TORCH_MODULE(Backbone);

int64_t parameter_count(const torch::nn::Module& module);

}  // namespace diffreg
