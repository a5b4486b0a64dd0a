#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diffreg/volume.hpp"

namespace diffreg {

struct DiceReport {
  std::vector<int64_t> class_ids;
  std::vector<double> per_class;  // aligned with class_ids
  double union_dice = 1.0;        // all listed classes merged into one region
  double mean = 1.0;              // "overall" aggregate
};

/// 2|A∩B| / (|A|+|B|) per class; a class absent from both maps scores 1.
/// `mean` averages the per-class scores and, when `include_union` is set,
/// the union-region score as one more entry.
DiceReport dice(const torch::Tensor& pred_labels, const torch::Tensor& true_labels,
                std::span<const int64_t> class_ids, bool include_union = true);
DiceReport dice(const Volume& pred_labels, const Volume& true_labels,
                std::span<const int64_t> class_ids, bool include_union = true);

/// Percentage of voxels where det(I + grad phi) <= 0. `disp` is (B, D, *spatial).
double folding_percent(const torch::Tensor& disp);
double folding_percent(const DisplacementField& disp);

/// Population standard deviation of det(I + grad phi).
double jacobian_sd(const torch::Tensor& disp);
double jacobian_sd(const DisplacementField& disp);

/// One row of the evaluation results file.
struct EvaluationRow {
  std::string run_id;
  std::string pair_id;
  std::vector<double> class_dice;
  double mean_dice = 0.0;
  double folding_percent = 0.0;
  double jacobian_sd = 0.0;
};

/// Writes `run_id,pair_id,dice_<c>...,dice_mean,folding_percent,jacobian_sd`.
/// With `append`, the header is only written when the file is new or empty.
void write_results_csv(const std::filesystem::path& path, std::span<const int64_t> class_ids,
                       std::span<const EvaluationRow> rows, bool append = false);
std::vector<EvaluationRow> read_results_csv(const std::filesystem::path& path);

/// Fixed-format number used by every CSV the library writes, so identical
/// runs produce identical bytes.
std::string format_number(double value);

}  // namespace diffreg
