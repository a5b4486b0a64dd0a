#include "diffreg/backbone.hpp"

#include <cmath>
#include <numbers>

#include "diffreg/errors.hpp"

namespace diffreg {

void BackboneConfig::validate() const {
  if (spatial_dims != 2 && spatial_dims != 3) {
    throw ConfigError("must be 2 or 3", "backbone.spatial_dims");
  }
  if (levels < 2) throw ConfigError("must be >= 2", "backbone.levels");
  if (base_channels < 1) throw ConfigError("must be >= 1", "backbone.base_channels");
  if (static_cast<int64_t>(channel_multipliers.size()) != levels) {
    throw ConfigError("needs one entry per level", "backbone.channel_multipliers");
  }
  if (groupnorm_groups < 1) throw ConfigError("must be >= 1", "backbone.groupnorm_groups");
  for (int64_t m : channel_multipliers) {
    if (m < 1) throw ConfigError("entries must be >= 1", "backbone.channel_multipliers");
    if ((base_channels * m) % groupnorm_groups != 0) {
      throw ConfigError("every level width must be divisible by groupnorm_groups",
                        "backbone.groupnorm_groups");
    }
  }
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
    throw ConfigError("must be even and >= 2", "backbone.time_embed_dim");
  }
}

int64_t BackboneConfig::channels(int64_t i) const {
  return base_channels * channel_multipliers.at(static_cast<size_t>(levels - 1 - i));
}

void BackboneConfig::check_extent(const Extent& extent) const {
  if (static_cast<int64_t>(extent.size()) != spatial_dims) {
    throw ConfigError("input has " + std::to_string(extent.size()) +
                          " spatial axes, model expects " + std::to_string(spatial_dims),
                      "backbone.spatial_dims");
  }
  const int64_t factor = int64_t{1} << (levels - 1);
  for (int64_t e : extent) {
    if (e % factor != 0) {
      throw ConfigError("input extent " + format_extent(extent) +
                            " not divisible by " + std::to_string(factor),
                        "backbone.levels");
    }
  }
}

ConvImpl::ConvImpl(int64_t dims, int64_t in, int64_t out, int64_t kernel, int64_t stride,
                   bool with_bias)
    : dims_(dims), stride_(stride), padding_(kernel / 2) {
  std::vector<int64_t> shape{out, in};
  shape.insert(shape.end(), static_cast<size_t>(dims), kernel);
  int64_t fan_in = in;
  for (int64_t d = 0; d < dims; ++d) fan_in *= kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight = register_parameter("weight", torch::empty(shape).uniform_(-bound, bound));
  if (with_bias) {
    bias = register_parameter("bias", torch::empty({out}).uniform_(-bound, bound));
  }
}

torch::Tensor ConvImpl::forward(const torch::Tensor& x) {
  if (dims_ == 2) return torch::conv2d(x, weight, bias, stride_, padding_);
  return torch::conv3d(x, weight, bias, stride_, padding_);
}

void ConvImpl::zero_() {
  torch::NoGradGuard guard;
  weight.zero_();
  if (bias.defined()) bias.zero_();
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& steps, int64_t dim) {
  const int64_t half = dim / 2;
  auto opts = torch::TensorOptions().dtype(steps.scalar_type());
  auto freqs = torch::exp(torch::arange(half, opts) *
                          (-std::log(10000.0) / static_cast<double>(half)));
  auto args = steps.unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

TimeEmbeddingImpl::TimeEmbeddingImpl(int64_t dim) : dim_(dim) {
  fc1 = register_module("fc1", torch::nn::Linear(dim, 4 * dim));
  fc2 = register_module("fc2", torch::nn::Linear(4 * dim, 4 * dim));
}

torch::Tensor TimeEmbeddingImpl::forward(const torch::Tensor& steps) {
  auto emb = sinusoidal_embedding(steps.to(fc1->weight.scalar_type()), dim_);
  return fc2(torch::silu(fc1(emb)));
}

ResBlockImpl::ResBlockImpl(int64_t dims, int64_t in, int64_t out, int64_t temb_dim,
                           int64_t groups)
    : in_(in), out_(out) {
  using torch::nn::GroupNormOptions;
  norm1 = register_module("norm1", torch::nn::GroupNorm(GroupNormOptions(groups, in)));
  conv1 = register_module("conv1", Conv(dims, in, out, 3));
  temb_proj = register_module("temb_proj", torch::nn::Linear(temb_dim, out));
  norm2 = register_module("norm2", torch::nn::GroupNorm(GroupNormOptions(groups, out)));
  conv2 = register_module("conv2", Conv(dims, out, out, 3));
  if (in != out) skip = register_module("skip", Conv(dims, in, out, 1));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  if (x.size(1) != in_) {
    throw ShapeError("residual block expects " + std::to_string(in_) +
                     " channels, got " + std::to_string(x.size(1)));
  }
  auto h = conv1(torch::silu(norm1(x)));
  std::vector<int64_t> bshape{h.size(0), out_};
  bshape.resize(static_cast<size_t>(h.dim()), 1);
  h = h + temb_proj(torch::silu(temb)).reshape(bshape);
  h = conv2(torch::silu(norm2(h)));
  return h + (skip ? skip(x) : x);
}

UpsampleImpl::UpsampleImpl(int64_t dims, int64_t channels) {
  conv = register_module("conv", Conv(dims, channels, channels, 3));
}

torch::Tensor UpsampleImpl::forward(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  std::vector<double> scale(static_cast<size_t>(x.dim() - 2), 2.0);
  auto up = F::interpolate(
      x, F::InterpolateFuncOptions().scale_factor(scale).mode(torch::kNearest));
  return conv(up);
}

EncoderImpl::EncoderImpl(const BackboneConfig& cfg, int64_t temb_dim) : cfg_(cfg) {
  const int64_t n = cfg.levels;
  const int64_t finest = cfg.channels(n - 1);
  in_conv = register_module("in_conv", Conv(cfg.spatial_dims, 3, finest, 3));
  int64_t prev = finest;
  // Built fine -> coarse; pyramid index of resolution step l is n-1-l.
  for (int64_t l = 0; l < n; ++l) {
    const int64_t ch = cfg.channels(n - 1 - l);
    blocks->push_back(ResBlock(cfg.spatial_dims, prev, ch, temb_dim, cfg.groupnorm_groups));
    if (l + 1 < n) downs->push_back(Conv(cfg.spatial_dims, ch, ch, 3, 2));
    prev = ch;
  }
  register_module("blocks", blocks);
  register_module("downs", downs);
  mid = register_module("mid", ResBlock(cfg.spatial_dims, prev, prev, temb_dim,
                                        cfg.groupnorm_groups));
}

Encoding EncoderImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  const int64_t n = cfg_.levels;
  FeaturePyramid skips(static_cast<size_t>(n));
  auto h = in_conv(x);
  for (int64_t l = 0; l < n; ++l) {
    h = blocks[l]->as<ResBlock>()->forward(h, temb);
    skips[n - 1 - l] = h;
    if (l + 1 < n) h = downs[l]->as<Conv>()->forward(h);
  }
  return Encoding{mid(h, temb), std::move(skips), temb};
}

DiffusionDecoderImpl::DiffusionDecoderImpl(const BackboneConfig& cfg, int64_t temb_dim)
    : cfg_(cfg) {
  int64_t prev = cfg.channels(0);
  for (int64_t i = 0; i < cfg.levels; ++i) {
    const int64_t ch = cfg.channels(i);
    if (i > 0) ups->push_back(Upsample(cfg.spatial_dims, prev));
    blocks->push_back(ResBlock(cfg.spatial_dims, prev + ch, ch, temb_dim, cfg.groupnorm_groups));
    prev = ch;
  }
  register_module("blocks", blocks);
  register_module("ups", ups);
  out_norm = register_module(
      "out_norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(cfg.groupnorm_groups, prev)));
  out_conv = register_module("out_conv", Conv(cfg.spatial_dims, prev, 1, 3));
}

DiffusionDecoding DiffusionDecoderImpl::forward(const Encoding& enc) {
  if (static_cast<int64_t>(enc.skips.size()) != cfg_.levels) {
    throw ShapeError("encoder pyramid has " + std::to_string(enc.skips.size()) +
                     " levels, decoder expects " + std::to_string(cfg_.levels));
  }
  FeaturePyramid features;
  auto h = enc.z;
  for (int64_t i = 0; i < cfg_.levels; ++i) {
    if (i > 0) h = ups[i - 1]->as<Upsample>()->forward(h);
    h = blocks[i]->as<ResBlock>()->forward(torch::cat({h, enc.skips[i]}, 1), enc.temb);
    features.push_back(h);
  }
  return DiffusionDecoding{out_conv(torch::silu(out_norm(h))), std::move(features)};
}

RegistrationDecoderImpl::RegistrationDecoderImpl(const BackboneConfig& cfg, int64_t temb_dim,
                                                 bool guided)
    : cfg_(cfg), guided_(guided) {
  for (int64_t i = 0; i < cfg.levels; ++i) {
    const int64_t ch = cfg.channels(i);
    if (i > 0) ups->push_back(Upsample(cfg.spatial_dims, cfg.channels(i - 1)));
    blocks->push_back(ResBlock(cfg.spatial_dims, block_in_channels(i), ch, temb_dim,
                               cfg.groupnorm_groups));
  }
  register_module("blocks", blocks);
  register_module("ups", ups);
}

int64_t RegistrationDecoderImpl::block_in_channels(int64_t i) const {
  const int64_t prev = i == 0 ? cfg_.channels(0) : cfg_.channels(i - 1);
  return prev + cfg_.channels(i) + (guided_ ? cfg_.channels(i) : 0);
}

FeaturePyramid RegistrationDecoderImpl::forward(const Encoding& enc,
                                                const FeaturePyramid& guidance) {
  const auto levels = static_cast<size_t>(cfg_.levels);
  if (enc.skips.size() != levels) {
    throw ShapeError("encoder pyramid has " + std::to_string(enc.skips.size()) +
                     " levels, decoder expects " + std::to_string(levels));
  }
  if (guided_ && guidance.size() != levels) {
    throw ShapeError("diffusion pyramid has " + std::to_string(guidance.size()) +
                     " levels, decoder expects " + std::to_string(levels));
  }
  FeaturePyramid features;
  for (size_t i = 0; i < levels; ++i) {
    auto prev = i == 0 ? enc.z : ups[i - 1]->as<Upsample>()->forward(features.back());
    std::vector<torch::Tensor> parts{prev, enc.skips[i]};
    if (guided_) parts.push_back(guidance[i]);
    features.push_back(blocks[i]->as<ResBlock>()->forward(torch::cat(parts, 1), enc.temb));
  }
  return features;
}

BackboneImpl::BackboneImpl(const BackboneConfig& cfg, bool guided) : cfg_(cfg) {
  cfg.validate();
  time_embedding = register_module("time_embedding", TimeEmbedding(cfg.time_embed_dim));
  const int64_t temb_dim = time_embedding->out_dim();
  encoder = register_module("encoder", Encoder(cfg, temb_dim));
  diffusion_decoder = register_module("diffusion_decoder", DiffusionDecoder(cfg, temb_dim));
  registration_decoder =
      register_module("registration_decoder", RegistrationDecoder(cfg, temb_dim, guided));
}

Encoding BackboneImpl::encode(const torch::Tensor& x_in, const torch::Tensor& steps) {
  if (x_in.dim() != cfg_.spatial_dims + 2 || x_in.size(1) != 3) {
    throw ShapeError("network input must be (B, 3, *spatial) with " +
                     std::to_string(cfg_.spatial_dims) + " spatial axes");
  }
  cfg_.check_extent(spatial_extent(x_in));
  if (steps.dim() != 1 || steps.size(0) != x_in.size(0)) {
    throw ShapeError("need one diffusion step per batch item");
  }
  return encoder(x_in, time_embedding(steps));
}

DiffusionDecoding BackboneImpl::decode_diffusion(const Encoding& enc) {
  return diffusion_decoder(enc);
}

FeaturePyramid BackboneImpl::decode_registration(const Encoding& enc,
                                                 const FeaturePyramid& guidance) {
  return registration_decoder(enc, guidance);
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace diffreg
