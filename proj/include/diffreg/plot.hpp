#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "diffreg/ablation.hpp"

namespace diffreg {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Diverging colour for a Jacobian determinant: blue below 1, white at 1,
/// red above 1. Non-positive values (folding) are drawn magenta.
Rgb det_color(double det);
inline constexpr Rgb kFoldingColor{255, 0, 255};

/// Grouped bars of mean DICE and mean folding per variant (mean over seeds,
/// whiskers at one standard deviation). Throws DomainError on empty input.
void plot_ablation_bars(const std::vector<SummaryRow>& rows, const std::filesystem::path& svg);

/// DICE and folding against gamma for every guided variant.
void plot_gamma_sweep(const std::vector<SummaryRow>& rows, const std::filesystem::path& svg);

/// Central slices of fixed / moving / warped images and the determinant
/// heatmap, side by side. Inputs are (1, *spatial) or (*spatial) tensors.
void plot_registration_panels(const torch::Tensor& fixed, const torch::Tensor& moving,
                              const torch::Tensor& warped, const torch::Tensor& det,
                              const std::filesystem::path& png, int64_t zoom = 4);

/// 8-bit RGB PNG, rows top to bottom.
void write_png(const std::filesystem::path& path, int64_t width, int64_t height,
               const std::vector<uint8_t>& rgb);

}  // namespace diffreg
