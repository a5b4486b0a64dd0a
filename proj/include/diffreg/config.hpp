#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "diffreg/backbone.hpp"
#include "diffreg/diffusion.hpp"
#include "diffreg/losses.hpp"

namespace diffreg {

/// Model family: "full" uses diffusion-guided decoding with per-level
/// attention heads; "no_fdg" decodes without the diffusion features and
/// predicts the field from the finest registration feature alone.
enum class Architecture { Full, NoFdg };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

/// Every hyperparameter of a run. Field names double as config-file keys.
struct TrainConfig {
  LossWeights loss;  // keys: lambda, lambda_phi, gamma, ncc_window
  double beta_start = 1e-6;
  double beta_end = 1e-2;
  int64_t timesteps = 2000;
  BackboneConfig backbone;
  Architecture architecture = Architecture::Full;
  double learning_rate = 2e-4;
  int64_t epochs = 300;
  int64_t batch_size = 1;
  uint64_t seed = 0;
  double grad_clip = 1.0;  // global norm, 0 disables
  int64_t max_steps = 0;   // 0 = no step cap
  double train_fraction = 0.9;
  int64_t threads = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  NoiseSchedule schedule() const;

  nlohmann::json to_json() const;
  /// Starts from the defaults and applies every key in `j`; unknown keys and
  /// type mismatches raise ConfigError with the field path.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// 3D 128x128x32 setup with the 700-epoch budget.
  static TrainConfig paper_scale();
};

}  // namespace diffreg
