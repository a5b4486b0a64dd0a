// Acceptance runner. Evaluates every acceptance criterion and prints one
// PASS/FAIL line per criterion, followed by a summary. Exit status is
// nonzero when any criterion fails.
//
//   diffreg_acceptance [--out DIR] [--only 1,3,...]

#define DOCTEST_CONFIG_IMPLEMENT
#undef CHECK
#include <doctest.h>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "diffreg/ablation.hpp"
#include "diffreg/grid.hpp"
#include "diffreg/log.hpp"
#include "diffreg/pipeline.hpp"
#include "diffreg/plot.hpp"
#include "moments.hpp"

using namespace diffreg;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets, pinned from the acceptance criteria.
constexpr double kKernelSuiteBudgetSeconds = 5 * 60;
constexpr int64_t kOverfitExtent = 32;
constexpr int64_t kOverfitSteps = 500;
constexpr double kOverfitDiceGain = 0.15;
constexpr double kOverfitMaxFolding = 5.0;
constexpr double kOverfitBudgetSeconds = 15 * 60;
constexpr int64_t kAblationExtent = 64;
constexpr int64_t kAblationPairs = 200;
const std::vector<uint64_t> kAblationSeeds{0, 1, 2};
constexpr double kSdgFoldingRatio = 0.7;
constexpr double kFdgDiceSlack = 0.005;
constexpr double kAblationBudgetSeconds = 2 * 60 * 60;
constexpr int64_t kMomentDraws = 10000;
constexpr double kMomentTolerance = 0.05;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the shared doctest cases selected by `suites`.
Outcome run_suites(const std::string& suites, double budget) {
  const auto t0 = Clock::now();
  doctest::Context ctx;
  ctx.setOption("test-suite", suites.c_str());
  ctx.setOption("no-intro", true);
  ctx.setOption("no-version", true);
  const int failed = ctx.run();
  const double elapsed = seconds_since(t0);
  Outcome o;
  o.pass = failed == 0 && elapsed < budget;
  o.detail = fmt::format("suites [{}] {} in {:.1f}s (budget {:.0f}s)", suites,
                         failed == 0 ? "all passed" : "had failures", elapsed, budget);
  return o;
}

// ---- 3: overfit smoke -------------------------------------------------------

struct OverfitTrace {
  double initial_dice = 0.0;
  double final_dice = 0.0;
  double best_dice = 0.0;
  double max_folding = 0.0;
  torch::Tensor final_phi;
};

OverfitTrace overfit_run() {
  GeneratorOptions opts;
  opts.phantom.extent = {kOverfitExtent, kOverfitExtent};
  opts.pairs = 1;
  const auto ds = generate_dataset(opts);
  TrainConfig cfg;  // defaults: lambda = lambda_phi = 20, gamma = 1, lr 2e-4
  Trainer trainer(cfg);
  std::vector<const PairData*> batch{&ds.pairs[0]};
  OverfitTrace trace;
  for (int64_t step = 0; step <= kOverfitSteps; ++step) {
    if (step > 0) trainer.step(batch);
    const auto e = evaluate_pair(trainer.net(), ds.pairs[0], ds.class_ids, "overfit");
    if (step == 0) trace.initial_dice = e.row.mean_dice;
    trace.final_dice = e.row.mean_dice;
    trace.best_dice = std::max(trace.best_dice, e.row.mean_dice);
    trace.max_folding = std::max(trace.max_folding, e.row.folding_percent);
  }
  trace.final_phi = register_pair(trainer.net(), ds.pairs[0].fixed, ds.pairs[0].moving).phi;
  return trace;
}

Outcome criterion_overfit() {
  const auto t0 = Clock::now();
  const auto a = overfit_run();
  const auto b = overfit_run();
  const double elapsed = seconds_since(t0);
  const bool deterministic = torch::equal(a.final_phi, b.final_phi) && a.final_dice == b.final_dice;
  const double gain = a.final_dice - a.initial_dice;
  Outcome o;
  o.pass = gain >= kOverfitDiceGain && a.max_folding < kOverfitMaxFolding && deterministic &&
           elapsed < kOverfitBudgetSeconds;
  o.detail = fmt::format(
      "DICE {:.4f} -> {:.4f} after {} steps (gain {:.4f}, need >= {}), max folding {:.4f}% "
      "(need < {}%), repeat run identical: {}, {:.1f}s for two runs",
      a.initial_dice, a.final_dice, kOverfitSteps, gain, kOverfitDiceGain, a.max_folding,
      kOverfitMaxFolding, deterministic ? "yes" : "no", elapsed);
  return o;
}

// ---- 4, 5, 6: ablation harness ---------------------------------------------

GeneratorOptions ablation_data_options() {
  GeneratorOptions opts;
  opts.phantom.extent = {kAblationExtent, kAblationExtent};
  opts.phantom.amplitude = 8.0;
  opts.phantom.smoothness = 0.1;
  opts.pairs = kAblationPairs;
  opts.seed = 0;
  return opts;
}

TrainConfig ablation_config() {
  return TrainConfig::load(fs::path(DIFFREG_SOURCE_DIR) / "configs" / "desk_ablation.json");
}

struct AblationHarness {
  std::vector<SummaryRow> summary;
  double seconds = 0.0;
};

AblationHarness run_harness(const fs::path& out) {
  const auto t0 = Clock::now();
  const auto ds = generate_dataset(ablation_data_options());
  const auto [train, test] = split_dataset(ds.pairs, 0.9, 0);
  AblationPlan plan;
  plan.base = ablation_config();
  plan.variants = {"full", "no_sdg", "no_fdg", "gamma=0.5", "gamma=2"};
  plan.seeds = kAblationSeeds;
  fs::create_directories(out);
  auto result = run_ablation(plan, train, test, ds.class_ids, out);
  plot_ablation_bars(result.summary, out / "ablation_bars.svg");
  plot_gamma_sweep(result.summary, out / "gamma_sweep.svg");
  return {std::move(result.summary), seconds_since(t0)};
}

Outcome criterion_sdg_fdg(const AblationHarness& h) {
  const auto& s = h.summary;
  const double fold_sdg = summary_mean(s, "full", "folding_percent");
  const double fold_plain = summary_mean(s, "no_sdg", "folding_percent");
  const double dice_fdg = summary_mean(s, "full", "dice_mean");
  const double dice_plain = summary_mean(s, "no_fdg", "dice_mean");
  int sdg_seeds = 0, fdg_seeds = 0;
  std::string per_seed;
  for (uint64_t seed : kAblationSeeds) {
    const double fs_ = summary_value(s, "full", seed, "folding_percent");
    const double fp = summary_value(s, "no_sdg", seed, "folding_percent");
    const double ds_ = summary_value(s, "full", seed, "dice_mean");
    const double dp = summary_value(s, "no_fdg", seed, "dice_mean");
    const bool sdg_ok = fs_ <= kSdgFoldingRatio * fp;
    const bool fdg_ok = ds_ >= dp - kFdgDiceSlack;
    sdg_seeds += sdg_ok;
    fdg_seeds += fdg_ok;
    per_seed += fmt::format(" seed{}: fold {:.4f}/{:.4f}% dice {:.4f}/{:.4f};", seed, fs_, fp, ds_, dp);
  }
  const bool sdg_mean_ok = fold_sdg <= kSdgFoldingRatio * fold_plain;
  const bool fdg_mean_ok = dice_fdg >= dice_plain - kFdgDiceSlack;
  // A zero-folding baseline cannot show a reduction, so it does not count as one.
  const bool baseline_folds = fold_plain > 0.0;
  Outcome o;
  o.pass = sdg_mean_ok && fdg_mean_ok && baseline_folds && sdg_seeds > 0 && fdg_seeds > 0 &&
           h.seconds < kAblationBudgetSeconds;
  o.detail = fmt::format(
      "mean folding SDG {:.4f}% vs no-SDG {:.4f}% (ratio {:.3f}, need <= {}), mean DICE FDG "
      "{:.4f} vs no-FDG {:.4f} (need >= no-FDG - {}); per-seed directions held SDG {}/3 FDG "
      "{}/3;{} harness {:.0f}s (budget {:.0f}s)",
      fold_sdg, fold_plain, fold_plain > 0 ? fold_sdg / fold_plain : std::nan(""),
      kSdgFoldingRatio, dice_fdg, dice_plain, kFdgDiceSlack, sdg_seeds, fdg_seeds, per_seed,
      h.seconds, kAblationBudgetSeconds);
  return o;
}

Outcome criterion_gamma_sweep(const AblationHarness& h) {
  const double lo = summary_mean(h.summary, "gamma=0.5", "folding_percent");
  const double mid = summary_mean(h.summary, "full", "folding_percent");
  const double hi = summary_mean(h.summary, "gamma=2", "folding_percent");
  Outcome o;
  o.pass = hi < lo;
  o.detail = fmt::format("mean folding gamma=0.5 {:.4f}%, gamma=1 {:.4f}%, gamma=2 {:.4f}% (need gamma=2 < gamma=0.5)",
                         lo, mid, hi);
  return o;
}

/// Two identical-seed runs of a reduced harness (same code path: data
/// generation, split, training of every variant, evaluation, file output).
Outcome criterion_determinism(const fs::path& out) {
  auto once = [&](const fs::path& dir) {
    GeneratorOptions opts = ablation_data_options();
    opts.phantom.extent = {32, 32};
    opts.pairs = 12;
    const auto ds = generate_dataset(opts);
    const auto [train, test] = split_dataset(ds.pairs, 0.75, 0);
    AblationPlan plan;
    plan.base = ablation_config();
    plan.base.max_steps = 60;
    plan.variants = {"full", "no_sdg", "no_fdg", "gamma=2"};
    plan.seeds = {0, 1};
    fs::remove_all(dir);
    fs::create_directories(dir);
    run_ablation(plan, train, test, ds.class_ids, dir);
  };
  once(out / "run_a");
  once(out / "run_b");
  const std::hash<std::string> hasher;
  Outcome o;
  std::string detail;
  o.pass = true;
  for (const char* name : {"results.csv", "summary.csv"}) {
    const auto a = slurp(out / "run_a" / name), b = slurp(out / "run_b" / name);
    const bool same = !a.empty() && a == b;
    o.pass = o.pass && same;
    detail += fmt::format("{} {:016x} vs {:016x} ({}); ", name, hasher(a), hasher(b),
                          same ? "equal" : "DIFFERENT");
  }
  o.detail = detail + "4 variants x 2 seeds, 32x32, 60 steps each";
  return o;
}

// ---- 7: checkpoint ---------------------------------------------------------

Outcome criterion_checkpoint(const fs::path& out) {
  GeneratorOptions opts;
  opts.phantom.extent = {32, 32};
  opts.pairs = 3;
  const auto ds = generate_dataset(opts);
  TrainConfig cfg;
  cfg.max_steps = 20;
  Trainer trainer(cfg);
  trainer.fit(std::vector<PairData>(ds.pairs.begin(), ds.pairs.begin() + 2));
  fs::create_directories(out);
  const auto path = out / "checkpoint.bin";
  trainer.save_checkpoint(path);
  auto restored = load_network(path);
  const auto& pair = ds.pairs[2];
  const auto a = register_pair(trainer.net(), pair.fixed, pair.moving);
  const auto b = register_pair(restored, pair.fixed, pair.moving);
  Outcome o;
  o.pass = torch::equal(a.phi, b.phi) && torch::equal(a.warped, b.warped) &&
           a.phi.abs().max().item<double>() > 0.0;
  o.detail = fmt::format("phi bitwise equal: {}, warped bitwise equal: {}, max|phi| {:.4g}",
                         torch::equal(a.phi, b.phi) ? "yes" : "no",
                         torch::equal(a.warped, b.warped) ? "yes" : "no",
                         a.phi.abs().max().item<double>());
  return o;
}

// ---- 8: forward-diffusion moments ------------------------------------------

Outcome criterion_moments() {
  const auto schedule = TrainConfig{}.schedule();
  const int64_t T = schedule.steps();
  Outcome o;
  o.pass = true;
  for (const auto& r : moment_check(schedule, {1, T / 2, T}, kMomentDraws, 2024)) {
    const bool ok = r.mean_error <= kMomentTolerance && r.variance_error <= kMomentTolerance;
    o.pass = o.pass && ok;
    o.detail += fmt::format("t={}: mean err {:.4f}, var err {:.4f}; ", r.t, r.mean_error, r.variance_error);
  }
  o.detail += fmt::format("{} draws, tolerance {}", kMomentDraws, kMomentTolerance);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string out = (fs::temp_directory_path() / "diffreg_acceptance").string();
  std::vector<int> only;
  app.add_option("--out", out, "Artifact directory");
  app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  log::set_level(log::Level::Warn);
  torch::set_num_threads(1);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8}
                                              : std::set<int>(only.begin(), only.end());
  const fs::path root(out);
  fs::create_directories(root);

  std::vector<std::pair<int, std::string>> names{
      {1, "kernel property suite"},        {2, "analytic Jacobian suite"},
      {3, "overfit smoke run"},            {4, "desk-scale SDG/FDG ablation trend"},
      {5, "gamma-sweep trend"},            {6, "end-to-end determinism"},
      {7, "checkpoint integrity"},         {8, "forward-diffusion moments"}};

  std::optional<AblationHarness> harness;
  auto get_harness = [&]() -> const AblationHarness& {
    if (!harness) harness = run_harness(root / "ablation");
    return *harness;
  };

  int failures = 0;
  std::vector<std::string> lines;
  for (const auto& [id, name] : names) {
    if (!selected.count(id)) continue;
    Outcome o;
    try {
      switch (id) {
        case 1: o = run_suites("grid,diffusion,fdg,losses,metrics", kKernelSuiteBudgetSeconds); break;
        case 2: o = run_suites("jacobian", kKernelSuiteBudgetSeconds); break;
        case 3: o = criterion_overfit(); break;
        case 4: o = criterion_sdg_fdg(get_harness()); break;
        case 5: o = criterion_gamma_sweep(get_harness()); break;
        case 6: o = criterion_determinism(root / "determinism"); break;
        case 7: o = criterion_checkpoint(root / "checkpoint"); break;
        case 8: o = criterion_moments(); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    const auto line = fmt::format("[{}] criterion {}: {}: {}", o.pass ? "PASS" : "FAIL", id, name, o.detail);
    fmt::print("{}\n", line);
    std::fflush(stdout);
    lines.push_back(line);
  }
  fmt::print("\nacceptance summary: {} of {} criteria passed\n", lines.size() - static_cast<size_t>(failures), lines.size());
  for (const auto& l : lines) fmt::print("  {}\n", l.substr(0, l.find(':', l.find("criterion") + 12)));
  return failures == 0 ? 0 : 1;
}
