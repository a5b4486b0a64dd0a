#include "diffreg/pipeline.hpp"

#include <cmath>
#include <limits>

#include "diffreg/log.hpp"

#include "diffreg/errors.hpp"
#include "diffreg/grid.hpp"
#include "diffreg/losses.hpp"

namespace diffreg {

torch::Tensor stack_volumes(std::span<const Volume* const> volumes) {
  std::vector<torch::Tensor> items;
  items.reserve(volumes.size());
  for (const auto* v : volumes) {
    if (v->channels() != 1) throw ShapeError("network inputs must be single-channel volumes");
    items.push_back(v->data.to(torch::kFloat32));
  }
  return torch::stack(items);
}

StepReport train_step(RegistrationNet& net, torch::optim::Optimizer& optimizer,
                      const NoiseSchedule& schedule, const TrainConfig& cfg,
                      const torch::Tensor& fixed, const torch::Tensor& moving,
                      std::span<const int64_t> steps, const torch::Tensor& eps) {
  net->train();
  const auto x_t = sample_perturbed(schedule, fixed, steps, eps);
  std::vector<double> step_values(steps.begin(), steps.end());
  const auto step_tensor = torch::tensor(step_values, fixed.options());

  optimizer.zero_grad();
  StepReport report;
  torch::Tensor total;
  try {
    const auto out = net->forward(fixed, moving, x_t, step_tensor);
    const auto warped = grid::warp(moving, out.phi);
    const auto l_diffusion = diffusion_loss(out.score, eps);
    const auto l_ncc = score_ncc_loss(warped, fixed, out.score, cfg.loss);
    const auto l_smooth = grid::smoothness_penalty(out.phi);
    report.diffusion = l_diffusion.item<double>();
    report.score_ncc = l_ncc.item<double>();
    report.smooth = l_smooth.item<double>();
    total = total_loss(l_diffusion, l_ncc, l_smooth, cfg.loss);
  } catch (const DomainError& e) {
    report.total = std::numeric_limits<double>::quiet_NaN();
    report.aborted = true;
    report.reason = e.what();
    optimizer.zero_grad();
    return report;
  }
  report.total = total.item<double>();
  total.backward();

  const auto params = net->parameters();
  double norm = 0.0;
  if (cfg.grad_clip > 0.0) {
    norm = torch::nn::utils::clip_grad_norm_(params, cfg.grad_clip);
  } else {
    for (const auto& p : params) {
      if (p.grad().defined()) norm += p.grad().pow(2).sum().item<double>();
    }
    norm = std::sqrt(norm);
  }
  if (!std::isfinite(norm)) {
    report.aborted = true;
    report.reason = "gradient is not finite";
    optimizer.zero_grad();
    return report;
  }
  optimizer.step();
  return report;
}

Registration register_pair(RegistrationNet& net, const torch::Tensor& fixed,
                           const torch::Tensor& moving) {
  torch::NoGradGuard no_grad;
  net->eval();
  const auto steps = torch::zeros({fixed.size(0)}, fixed.options());
  auto out = net->forward(fixed, moving, fixed, steps);
  return Registration{out.phi, grid::warp(moving, out.phi)};
}

Registration register_pair(RegistrationNet& net, const Volume& fixed, const Volume& moving) {
  const std::array<const Volume*, 1> f{&fixed}, m{&moving};
  return register_pair(net, stack_volumes(f), stack_volumes(m));
}

PairEvaluation evaluate_pair(RegistrationNet& net, const PairData& pair,
                             std::span<const int64_t> class_ids, const std::string& run_id) {
  const auto reg = register_pair(net, pair.fixed, pair.moving);
  PairEvaluation eval;
  eval.row.run_id = run_id;
  eval.row.pair_id = pair.id;
  eval.row.folding_percent = folding_percent(reg.phi);
  eval.row.jacobian_sd = jacobian_sd(reg.phi);
  if (pair.fixed_labels && pair.moving_labels) {
    const auto moving_labels = pair.moving_labels->batched().to(torch::kFloat32);
    const auto warped_labels =
        grid::warp(moving_labels, reg.phi.to(torch::kFloat32), grid::Interpolation::Nearest);
    const auto after = dice(warped_labels.squeeze(0), pair.fixed_labels->data, class_ids);
    const auto before = dice(pair.moving_labels->data, pair.fixed_labels->data, class_ids);
    eval.row.class_dice = after.per_class;
    eval.row.mean_dice = after.mean;
    eval.initial_dice = before.mean;
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    eval.row.class_dice.assign(class_ids.size(), nan);
    eval.row.mean_dice = nan;
    eval.initial_dice = nan;
  }
  return eval;
}

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)), schedule_(cfg_.schedule()) {
  cfg_.validate();
  torch::set_num_threads(static_cast<int>(cfg_.threads));
  torch::manual_seed(cfg_.seed);
  net_ = RegistrationNet(cfg_.backbone, cfg_.architecture);
  optimizer_ = std::make_unique<torch::optim::Adam>(
      net_->parameters(), torch::optim::AdamOptions(cfg_.learning_rate));
  std::seed_seq seq{static_cast<uint32_t>(cfg_.seed), static_cast<uint32_t>(cfg_.seed >> 32),
                    0x5eedu};
  rng_.seed(seq);
}

StepReport Trainer::step(std::span<const PairData* const> batch) {
  if (batch.empty()) throw DomainError("empty training batch");
  std::vector<const Volume*> fixed, moving;
  for (const auto* pair : batch) {
    fixed.push_back(&pair->fixed);
    moving.push_back(&pair->moving);
  }
  const auto f = stack_volumes(fixed);
  const auto m = stack_volumes(moving);
  if (!f.sizes().equals(m.sizes())) throw ShapeError("fixed and moving extents differ");
  cfg_.backbone.check_extent(spatial_extent(f));

  std::uniform_int_distribution<int64_t> pick_step(1, schedule_.steps());
  std::vector<int64_t> steps;
  for (size_t i = 0; i < batch.size(); ++i) steps.push_back(pick_step(rng_));
  auto eps = torch::empty(f.sizes(), torch::kFloat32);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  auto* p = eps.data_ptr<float>();
  for (int64_t i = 0; i < eps.numel(); ++i) p[i] = normal(rng_);

  auto report = train_step(net_, *optimizer_, schedule_, cfg_, f, m, steps, eps);
  report.step = ++global_step_;
  report.epoch = epoch_;
  if (report.aborted) log::warn("step {} aborted: {}", report.step, report.reason);
  return report;
}

bool Trainer::finished() const {
  return epoch_ >= cfg_.epochs || (cfg_.max_steps > 0 && global_step_ >= cfg_.max_steps);
}

EpochSummary Trainer::run_epoch(const std::vector<PairData>& pairs, const StepCallback& on_step) {
  if (pairs.empty()) throw DomainError("no training pairs");
  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng_)]);
  }

  EpochSummary summary;
  summary.epoch = epoch_;
  const auto batch_size = static_cast<size_t>(cfg_.batch_size);
  for (size_t start = 0; start < order.size(); start += batch_size) {
    if (cfg_.max_steps > 0 && global_step_ >= cfg_.max_steps) break;
    std::vector<const PairData*> batch;
    for (size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      batch.push_back(&pairs[order[i]]);
    }
    const auto report = step(batch);
    if (on_step) on_step(report);
    if (report.aborted) continue;
    ++summary.steps;
    summary.diffusion += report.diffusion;
    summary.score_ncc += report.score_ncc;
    summary.smooth += report.smooth;
    summary.total += report.total;
  }
  if (summary.steps > 0) {
    const auto n = static_cast<double>(summary.steps);
    summary.diffusion /= n;
    summary.score_ncc /= n;
    summary.smooth /= n;
    summary.total /= n;
  }
  ++epoch_;
  history_.push_back(summary);
  return summary;
}

void Trainer::fit(const std::vector<PairData>& pairs, const std::filesystem::path& checkpoint,
                  const StepCallback& on_step) {
  while (!finished()) {
    const auto s = run_epoch(pairs, on_step);
    log::info("epoch {} steps {} total {:.5f} diffusion {:.5f} score_ncc {:.5f} smooth {:.5f}",
                 s.epoch, s.steps, s.total, s.diffusion, s.score_ncc, s.smooth);
    if (!checkpoint.empty()) save_checkpoint(checkpoint);
  }
}

}  // namespace diffreg
