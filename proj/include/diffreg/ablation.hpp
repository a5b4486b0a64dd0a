#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "diffreg/config.hpp"
#include "diffreg/data.hpp"
#include "diffreg/metrics.hpp"

namespace diffreg {

/// A named model/objective change relative to the base config.
///   full       -> guided architecture, base gamma
///   no_fdg     -> unguided architecture, base gamma
///   no_sdg     -> guided architecture, gamma = 0 (vanilla NCC)
///   gamma=<g>  -> guided architecture, gamma = g
struct AblationVariant {
  std::string name;
  Architecture architecture = Architecture::Full;
  double gamma = 1.0;
};

/// Throws ConfigError for unknown names.
AblationVariant parse_variant(const std::string& name, double base_gamma);

/// One (variant, seed, metric) measurement, averaged over held-out pairs.
struct SummaryRow {
  std::string variant;
  uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

struct AblationPlan {
  TrainConfig base;
  std::vector<std::string> variants{"full", "no_fdg", "no_sdg"};
  std::vector<uint64_t> seeds{0};
};

struct AblationResult {
  std::vector<EvaluationRow> rows;   // per held-out pair
  std::vector<SummaryRow> summary;   // dice_mean, folding_percent, jacobian_sd, ...
};

/// Trains every (variant, seed) on `train`, evaluates on `test` and, when
/// `out_dir` is set, writes `results.csv` (per pair) and `summary.csv`.
AblationResult run_ablation(const AblationPlan& plan, const std::vector<PairData>& train,
                            const std::vector<PairData>& test, const std::vector<int64_t>& class_ids,
                            const std::filesystem::path& out_dir = {});

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

/// Mean of `metric` for `variant` over all seeds in `rows`; NaN if absent.
double summary_mean(const std::vector<SummaryRow>& rows, const std::string& variant,
                    const std::string& metric);
/// Value for one seed; NaN if absent.
double summary_value(const std::vector<SummaryRow>& rows, const std::string& variant,
                     uint64_t seed, const std::string& metric);

}  // namespace diffreg
