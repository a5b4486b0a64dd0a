#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <vector>

namespace diffreg {

/// Forward-process noise schedule: betas for steps 1..T and their running
/// products alpha_t = prod_{s<=t} (1 - beta_s), with alpha_0 = 1.
class NoiseSchedule {
 public:
  /// Betas linearly spaced from `beta_start` to `beta_end` inclusive.
  static NoiseSchedule linear(double beta_start, double beta_end, int64_t steps);

  int64_t steps() const { return static_cast<int64_t>(betas_.size()); }
  double beta(int64_t t) const;
  double alpha_cum(int64_t t) const;
  const std::vector<double>& betas() const { return betas_; }

 private:
  explicit NoiseSchedule(std::vector<double> betas);

  std::vector<double> betas_;
  std::vector<double> alphas_cum_;  // index t, alphas_cum_[0] == 1
};

/// x_t = sqrt(alpha_t) * clean + sqrt(1 - alpha_t) * eps. The noise is always
/// supplied by the caller.
torch::Tensor sample_perturbed(const NoiseSchedule& schedule,
                               const torch::Tensor& clean, int64_t t,
                               const torch::Tensor& eps);

/// Batched variant with one step per leading-dimension item.
torch::Tensor sample_perturbed(const NoiseSchedule& schedule,
                               const torch::Tensor& clean,
                               std::span<const int64_t> steps,
                               const torch::Tensor& eps);

/// Mean squared error between the predicted noise and the injected noise.
torch::Tensor diffusion_loss(const torch::Tensor& predicted, const torch::Tensor& eps);

}  // namespace diffreg
