#pragma once

#include <torch/torch.h>

namespace diffreg {

/// Weights of the joint objective.
struct LossWeights {
  double lambda = 20.0;      // score-reweighted NCC
  double lambda_phi = 20.0;  // smoothness
  double gamma = 1.0;        // reweighing exponent
  int64_t ncc_window = 9;

  void validate() const;
};

/// Added to the NCC denominator; windows whose variance falls below it score 0.
inline constexpr double kNccStabilizer = 1e-5;

/// Squared local correlation coefficient of `a` and `b` over a centred cubic
/// window of edge `window`, computed with zero-padded box sums:
///   cross^2 / (var_a * var_b + eps)
/// a, b are (B, C, *spatial); returns the same shape with values in [0, 1].
torch::Tensor local_ncc_map(const torch::Tensor& a, const torch::Tensor& b, int64_t window);

/// mean( sigmoid(S)^gamma * -local_ncc_map(warped, fixed) ). The score S is
/// detached, so gradients reach only `warped`.
torch::Tensor score_ncc_loss(const torch::Tensor& warped, const torch::Tensor& fixed,
                             const torch::Tensor& score, const LossWeights& weights);

/// diffusion + lambda * score_ncc + lambda_phi * smooth. Throws DomainError
/// when any component is non-finite.
torch::Tensor total_loss(const torch::Tensor& diffusion, const torch::Tensor& score_ncc,
                         const torch::Tensor& smooth, const LossWeights& weights);

}  // namespace diffreg
