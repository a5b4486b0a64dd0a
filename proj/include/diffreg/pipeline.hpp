#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "diffreg/config.hpp"
#include "diffreg/data.hpp"
#include "diffreg/diffusion.hpp"
#include "diffreg/metrics.hpp"
#include "diffreg/model.hpp"

namespace diffreg {

/// Loss components of one optimisation step.
struct StepReport {
  int64_t step = 0;
  int64_t epoch = 0;
  double diffusion = 0.0;
  double score_ncc = 0.0;
  double smooth = 0.0;
  double total = 0.0;
  bool aborted = false;  // non-finite loss or gradient; parameters untouched
  std::string reason;
};

/// One joint update on a batch. `fixed`/`moving` are (B, 1, *spatial),
/// `steps` holds one diffusion step per item and `eps` matches `fixed`.
StepReport train_step(RegistrationNet& net, torch::optim::Optimizer& optimizer,
                      const NoiseSchedule& schedule, const TrainConfig& cfg,
                      const torch::Tensor& fixed, const torch::Tensor& moving,
                      std::span<const int64_t> steps, const torch::Tensor& eps);

struct Registration {
  torch::Tensor phi;     // (B, D, *spatial)
  torch::Tensor warped;  // (B, 1, *spatial)
};

/// Deterministic inference: input {fixed, moving, fixed} at step 0, no
/// random draws, no gradients.
Registration register_pair(RegistrationNet& net, const torch::Tensor& fixed,
                           const torch::Tensor& moving);
Registration register_pair(RegistrationNet& net, const Volume& fixed, const Volume& moving);

struct PairEvaluation {
  EvaluationRow row;
  double initial_dice = 0.0;
};

/// Registers one pair and scores the nearest-neighbour-warped moving labels
/// against the fixed labels. Pairs without labels report NaN DICE.
PairEvaluation evaluate_pair(RegistrationNet& net, const PairData& pair,
                             std::span<const int64_t> class_ids, const std::string& run_id);

struct EpochSummary {
  int64_t epoch = 0;
  int64_t steps = 0;
  double diffusion = 0.0;
  double score_ncc = 0.0;
  double smooth = 0.0;
  double total = 0.0;
};

/// Owns the model, optimizer and RNG of one run.
class Trainer {
 public:
  using StepCallback = std::function<void(const StepReport&)>;

  explicit Trainer(TrainConfig cfg);

  /// Draws diffusion steps and noise from the run RNG and performs one update.
  StepReport step(std::span<const PairData* const> batch);

  /// One pass over `pairs` in a seeded order. Stops early at `max_steps`.
  EpochSummary run_epoch(const std::vector<PairData>& pairs, const StepCallback& on_step = {});

  /// Trains until `epochs` (or `max_steps`) is reached, checkpointing to
  /// `checkpoint` after every epoch when a path is given.
  void fit(const std::vector<PairData>& pairs, const std::filesystem::path& checkpoint = {},
           const StepCallback& on_step = {});

  bool finished() const;

  void save_checkpoint(const std::filesystem::path& path) const;
  static Trainer load_checkpoint(const std::filesystem::path& path);

  RegistrationNet& net() { return net_; }
  const TrainConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  int64_t epoch() const { return epoch_; }
  int64_t global_step() const { return global_step_; }
  const std::vector<EpochSummary>& history() const { return history_; }

 private:
  TrainConfig cfg_;
  NoiseSchedule schedule_;
  RegistrationNet net_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::mt19937_64 rng_;
  int64_t epoch_ = 0;
  int64_t global_step_ = 0;
  std::vector<EpochSummary> history_;
};

/// Loads only the network from a checkpoint.
RegistrationNet load_network(const std::filesystem::path& checkpoint, TrainConfig* cfg = nullptr);

/// Stacks single-channel volumes into a (B, 1, *spatial) float batch.
torch::Tensor stack_volumes(std::span<const Volume* const> volumes);

}  // namespace diffreg
