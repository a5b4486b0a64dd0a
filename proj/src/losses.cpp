#include "diffreg/losses.hpp"

#include <cmath>

#include "diffreg/errors.hpp"

namespace diffreg {

void LossWeights::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("must be >= 0", "lambda");
  if (!(lambda_phi >= 0.0) || !std::isfinite(lambda_phi)) {
    throw ConfigError("must be >= 0", "lambda_phi");
  }
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("must be >= 0", "gamma");
  if (ncc_window < 3 || ncc_window % 2 == 0) {
    throw ConfigError("must be odd and >= 3", "ncc_window");
  }
}

namespace {

torch::Tensor box_sum(const torch::Tensor& x, int64_t window) {
  const int64_t dims = x.dim() - 2;
  std::vector<int64_t> kshape{1, 1};
  kshape.insert(kshape.end(), static_cast<size_t>(dims), window);
  auto kernel = torch::ones(kshape, x.options().requires_grad(false));
  std::vector<int64_t> flat_shape = x.sizes().vec();
  flat_shape[0] = x.size(0) * x.size(1);
  flat_shape[1] = 1;
  auto flat = x.reshape(flat_shape);
  auto summed = dims == 2 ? torch::conv2d(flat, kernel, {}, 1, window / 2)
                          : torch::conv3d(flat, kernel, {}, 1, window / 2);
  return summed.reshape(x.sizes());
}

}  // namespace

torch::Tensor local_ncc_map(const torch::Tensor& a, const torch::Tensor& b, int64_t window) {
  if (window < 1 || window % 2 == 0) {
    throw ConfigError("NCC window must be odd, got " + std::to_string(window), "ncc_window");
  }
  if (!a.sizes().equals(b.sizes())) throw ShapeError("NCC operands differ in extent");
  if (a.dim() != 4 && a.dim() != 5) throw ShapeError("NCC operands must be (B, C, *spatial)");

  double count = 1.0;
  for (int64_t d = 2; d < a.dim(); ++d) count *= static_cast<double>(window);

  auto sa = box_sum(a, window);
  auto sb = box_sum(b, window);
  auto cross = box_sum(a * b, window) - sa * sb / count;
  auto var_a = box_sum(a * a, window) - sa * sa / count;
  auto var_b = box_sum(b * b, window) - sb * sb / count;
  auto ncc = cross * cross / (var_a * var_b + kNccStabilizer);
  auto degenerate = (var_a < kNccStabilizer) | (var_b < kNccStabilizer);
  return torch::where(degenerate, torch::zeros_like(ncc), ncc);
}

torch::Tensor score_ncc_loss(const torch::Tensor& warped, const torch::Tensor& fixed,
                             const torch::Tensor& score, const LossWeights& weights) {
  if (!warped.sizes().equals(fixed.sizes()) || !warped.sizes().equals(score.sizes())) {
    throw ShapeError("warped, fixed and score volumes must share one extent");
  }
  auto ncc = local_ncc_map(warped, fixed, weights.ncc_window);
  auto weight = torch::sigmoid(score.detach()).pow(weights.gamma);
  return (weight * -ncc).mean();
}

torch::Tensor total_loss(const torch::Tensor& diffusion, const torch::Tensor& score_ncc,
                         const torch::Tensor& smooth, const LossWeights& weights) {
  for (const auto* t : {&diffusion, &score_ncc, &smooth}) {
    if (!std::isfinite(t->item<double>())) {
      throw DomainError("loss component is not finite");
    }
  }
  return diffusion + weights.lambda * score_ncc + weights.lambda_phi * smooth;
}

}  // namespace diffreg
