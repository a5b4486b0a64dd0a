#include "diffreg/diffusion.hpp"

#include <cmath>

#include "diffreg/errors.hpp"

namespace diffreg {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  alphas_cum_.reserve(betas_.size() + 1);
  alphas_cum_.push_back(1.0);
  for (double b : betas_) alphas_cum_.push_back(alphas_cum_.back() * (1.0 - b));
}

NoiseSchedule NoiseSchedule::linear(double beta_start, double beta_end, int64_t steps) {
  if (!(beta_start > 0.0)) throw ConfigError("must be > 0", "beta_start");
  if (!(beta_end < 1.0)) throw ConfigError("must be < 1", "beta_end");
  if (beta_start > beta_end) throw ConfigError("must be >= beta_start", "beta_end");
  if (steps < 1) throw ConfigError("must be >= 1", "timesteps");

  std::vector<double> betas(static_cast<size_t>(steps));
  for (int64_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * frac;
  }
  betas.back() = steps == 1 ? beta_start : beta_end;
  return NoiseSchedule(std::move(betas));
}

double NoiseSchedule::beta(int64_t t) const {
  if (t < 1 || t > steps()) {
    throw DomainError("diffusion step " + std::to_string(t) + " outside [1, " +
                      std::to_string(steps()) + "]");
  }
  return betas_[t - 1];
}

double NoiseSchedule::alpha_cum(int64_t t) const {
  if (t < 0 || t > steps()) {
    throw DomainError("diffusion step " + std::to_string(t) + " outside [0, " +
                      std::to_string(steps()) + "]");
  }
  return alphas_cum_[t];
}

torch::Tensor sample_perturbed(const NoiseSchedule& schedule,
                               const torch::Tensor& clean, int64_t t,
                               const torch::Tensor& eps) {
  if (!clean.sizes().equals(eps.sizes())) {
    throw ShapeError("noise extent does not match the clean image");
  }
  if (t < 1 || t > schedule.steps()) {
    throw DomainError("diffusion step " + std::to_string(t) + " outside [1, " +
                      std::to_string(schedule.steps()) + "]");
  }
  const double a = schedule.alpha_cum(t);
  return std::sqrt(a) * clean + std::sqrt(1.0 - a) * eps;
}

torch::Tensor sample_perturbed(const NoiseSchedule& schedule,
                               const torch::Tensor& clean,
                               std::span<const int64_t> steps,
                               const torch::Tensor& eps) {
  if (!clean.sizes().equals(eps.sizes())) {
    throw ShapeError("noise extent does not match the clean image");
  }
  if (clean.dim() == 0 || static_cast<int64_t>(steps.size()) != clean.size(0)) {
    throw ShapeError("need one diffusion step per batch item");
  }
  std::vector<torch::Tensor> items;
  items.reserve(steps.size());
  for (size_t i = 0; i < steps.size(); ++i) {
    items.push_back(sample_perturbed(schedule, clean[i], steps[i], eps[i]));
  }
  return torch::stack(items);
}

torch::Tensor diffusion_loss(const torch::Tensor& predicted, const torch::Tensor& eps) {
  if (!predicted.sizes().equals(eps.sizes())) {
    throw ShapeError("predicted noise and injected noise differ in extent");
  }
  return (predicted - eps).pow(2).mean();
}

}  // namespace diffreg
