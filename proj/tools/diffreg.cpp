// Command-line front end: dataset generation, training, registration,
// evaluation, ablations and figures.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "diffreg/ablation.hpp"
#include "diffreg/data.hpp"
#include "diffreg/errors.hpp"
#include "diffreg/grid.hpp"
#include "diffreg/log.hpp"
#include "diffreg/metrics.hpp"
#include "diffreg/pipeline.hpp"
#include "diffreg/plot.hpp"

namespace fs = std::filesystem;
using namespace diffreg;

namespace {

constexpr const char* kDataEnv = "DIFFREG_DATA_DIR";
constexpr const char* kCheckpointName = "checkpoint.bin";
constexpr const char* kTrainLogName = "train_log.csv";

/// --data falls back to $DIFFREG_DATA_DIR; a directory means its manifest.
fs::path resolve_data(const std::string& flag) {
  std::string path = flag;
  if (path.empty()) {
    const char* env = std::getenv(kDataEnv);
    if (env == nullptr || *env == '\0') {
      throw ConfigError(fmt::format("no dataset given and {} is unset", kDataEnv), "data");
    }
    path = env;
  }
  fs::path p(path);
  if (fs::is_directory(p)) p /= "manifest.json";
  if (!fs::exists(p)) throw IoError("missing dataset manifest " + p.string());
  return p;
}

Extent parse_extent(const std::string& text) {
  Extent out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      size_t used = 0;
      out.push_back(std::stoll(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::logic_error&) {
      throw ConfigError("expected e.g. 64x64 or 128x128x32, got '" + text + "'", "extent");
    }
  }
  if (out.size() != 2 && out.size() != 3) {
    throw ConfigError("expected 2 or 3 axes, got '" + text + "'", "extent");
  }
  return out;
}

TrainConfig load_config(const std::string& path) {
  return path.empty() ? TrainConfig{} : TrainConfig::load(path);
}

std::vector<PairData> held_out(const Dataset& ds, const TrainConfig& cfg) {
  auto [train, test] = split_dataset(ds.pairs, cfg.train_fraction, cfg.seed);
  return test.empty() ? train : test;
}

double mean_initial_dice(const Dataset& ds) {
  double sum = 0.0;
  int64_t n = 0;
  for (const auto& p : ds.pairs) {
    if (!p.fixed_labels || !p.moving_labels) continue;
    sum += dice(*p.moving_labels, *p.fixed_labels, ds.class_ids).mean;
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n) : std::nan("");
}

/// Drops log rows past `last_step` (written after the last checkpoint of an
/// interrupted run) so the log continues without duplicates.
void trim_train_log(const fs::path& path, int64_t last_step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      kept += line + "\n";
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= last_step) kept += line + "\n";
  }
  in.close();
  std::ofstream(path, std::ios::trunc) << kept;
}

// ---- generate --------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  int64_t pairs = 100;
  std::string extent = "64x64";
  double amplitude = PhantomSpec{}.amplitude;
  double smoothness = PhantomSpec{}.smoothness;
  uint64_t seed = 0;
  bool force = false;
};

void cmd_generate(const GenerateArgs& a) {
  GeneratorOptions opts;
  opts.pairs = a.pairs;
  opts.seed = a.seed;
  opts.phantom.extent = parse_extent(a.extent);
  opts.phantom.amplitude = a.amplitude;
  opts.phantom.smoothness = a.smoothness;
  if (opts.pairs < 1) throw ConfigError("must be >= 1", "pairs");
  std::string out = a.out;
  if (out.empty()) {
    const char* env = std::getenv(kDataEnv);
    if (env == nullptr || *env == '\0') throw ConfigError("required (or set DIFFREG_DATA_DIR)", "out");
    out = env;
  }
  const auto ds = generate_dataset(out, opts, a.force);
  fmt::print("pairs {} extent {} initial_dice {}\n", ds.pairs.size(), format_extent(ds.extent),
             format_number(mean_initial_dice(ds)));
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out;
};

void cmd_train(const TrainArgs& a) {
  const fs::path out(a.out);
  fs::create_directories(out);
  const auto checkpoint = out / kCheckpointName;
  const auto log_path = out / kTrainLogName;

  const auto ds = load_dataset(resolve_data(a.data));
  auto trainer = [&] {
    if (fs::exists(checkpoint)) {
      auto t = Trainer::load_checkpoint(checkpoint);
      log::info("resuming from {} at epoch {} step {}", checkpoint.string(), t.epoch(),
                t.global_step());
      trim_train_log(log_path, t.global_step());
      return t;
    }
    auto cfg = load_config(a.config);
    cfg.save(out / "config.json");
    fs::remove(log_path);
    return Trainer(cfg);
  }();
  trainer.config().backbone.check_extent(ds.extent);

  const auto [train, test] = split_dataset(ds.pairs, trainer.config().train_fraction,
                                           trainer.config().seed);
  const bool new_log = !fs::exists(log_path);
  std::ofstream log_file(log_path, std::ios::app);
  if (new_log) log_file << "step,epoch,diffusion,score_ncc,smooth,total,aborted\n";
  trainer.fit(train, checkpoint, [&](const StepReport& r) {
    log_file << r.step << ',' << r.epoch << ',' << format_number(r.diffusion) << ','
             << format_number(r.score_ncc) << ',' << format_number(r.smooth) << ','
             << format_number(r.total) << ',' << (r.aborted ? 1 : 0) << '\n';
  });
  log_file.flush();

  double dice_sum = 0.0, fold_sum = 0.0;
  for (const auto& pair : test) {
    const auto e = evaluate_pair(trainer.net(), pair, ds.class_ids, "train");
    dice_sum += e.row.mean_dice;
    fold_sum += e.row.folding_percent;
  }
  const auto n = static_cast<double>(std::max<size_t>(test.size(), 1));
  fmt::print("epochs {} steps {} held_out {} dice_mean {} folding_percent {}\n", trainer.epoch(),
             trainer.global_step(), test.size(), format_number(dice_sum / n),
             format_number(fold_sum / n));
}

// ---- register --------------------------------------------------------------

struct RegisterArgs {
  std::string checkpoint, fixed, moving, out, fixed_labels, moving_labels;
};

void cmd_register(const RegisterArgs& a) {
  TrainConfig cfg;
  auto net = load_network(a.checkpoint, &cfg);
  const auto fixed = read_volume(a.fixed);
  const auto moving = read_volume(a.moving);
  if (fixed.extent() != moving.extent()) {
    throw ShapeError("fixed " + format_extent(fixed.extent()) + " and moving " +
                     format_extent(moving.extent()) + " differ");
  }
  cfg.backbone.check_extent(fixed.extent());
  const auto reg = register_pair(net, fixed, moving);

  const fs::path out(a.out);
  fs::create_directories(out);
  const auto phi = Volume::make(reg.phi.squeeze(0).contiguous(), fixed.spacing);
  const auto warped = Volume::make(reg.warped.squeeze(0).contiguous(), fixed.spacing);
  write_raw_volume(out / "phi", phi);
  write_raw_volume(out / "warped", warped);
  fmt::print("folding_percent {} jacobian_sd {}\n", format_number(folding_percent(reg.phi)),
             format_number(jacobian_sd(reg.phi)));

  if (a.fixed_labels.empty() != a.moving_labels.empty()) {
    throw ConfigError("--fixed-labels and --moving-labels go together", "labels");
  }
  if (!a.fixed_labels.empty()) {
    auto fixed_labels = read_volume(a.fixed_labels);
    auto moving_labels = read_volume(a.moving_labels);
    fixed_labels.is_label = moving_labels.is_label = true;
    const auto field = DisplacementField::make(phi.data);
    const auto warped_labels = grid::warp(moving_labels, field, grid::Interpolation::Nearest);
    write_raw_volume(out / "warped_labels", warped_labels);
    const auto classes = [&] {
      auto ids = std::get<0>(at::_unique(fixed_labels.data.to(torch::kInt64)));
      std::vector<int64_t> v;
      for (int64_t i = 0; i < ids.numel(); ++i) {
        if (ids[i].item<int64_t>() != 0) v.push_back(ids[i].item<int64_t>());
      }
      std::sort(v.begin(), v.end());
      return v;
    }();
    const auto before = dice(moving_labels, fixed_labels, classes);
    const auto after = dice(warped_labels, fixed_labels, classes);
    fmt::print("initial_dice {} dice_mean {}\n", format_number(before.mean),
               format_number(after.mean));
  }
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint, data, out, run_id = "eval";
  bool all = false;
};

void cmd_evaluate(const EvaluateArgs& a) {
  TrainConfig cfg;
  auto net = load_network(a.checkpoint, &cfg);
  const auto ds = load_dataset(resolve_data(a.data));
  cfg.backbone.check_extent(ds.extent);
  const auto pairs = a.all ? ds.pairs : held_out(ds, cfg);
  std::vector<EvaluationRow> rows;
  double dice_sum = 0.0, fold_sum = 0.0, sd_sum = 0.0;
  for (const auto& pair : pairs) {
    auto e = evaluate_pair(net, pair, ds.class_ids, a.run_id);
    dice_sum += e.row.mean_dice;
    fold_sum += e.row.folding_percent;
    sd_sum += e.row.jacobian_sd;
    rows.push_back(std::move(e.row));
  }
  write_results_csv(a.out, ds.class_ids, rows, /*append=*/true);
  const auto n = static_cast<double>(rows.size());
  fmt::print("pairs {} dice_mean {} folding_percent {} jacobian_sd {}\n", rows.size(),
             format_number(dice_sum / n), format_number(fold_sum / n), format_number(sd_sum / n));
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string config, data, out;
  std::vector<std::string> variants{"full", "no_fdg", "no_sdg", "gamma=0.5", "gamma=2"};
  std::vector<uint64_t> seeds{0, 1, 2};
};

void cmd_ablate(const AblateArgs& a) {
  AblationPlan plan;
  plan.base = load_config(a.config);
  plan.variants = a.variants;
  plan.seeds = a.seeds;
  for (const auto& v : plan.variants) parse_variant(v, plan.base.loss.gamma);
  const auto ds = load_dataset(resolve_data(a.data));
  plan.base.backbone.check_extent(ds.extent);
  // The split is fixed across seeds so every variant sees the same held-out pairs.
  const auto [train, test] = split_dataset(ds.pairs, plan.base.train_fraction, 0);
  fs::create_directories(a.out);
  const auto result = run_ablation(plan, train, test.empty() ? train : test, ds.class_ids, a.out);
  for (const auto& v : plan.variants) {
    fmt::print("{} dice_mean {} folding_percent {} jacobian_sd {}\n", v,
               format_number(summary_mean(result.summary, v, "dice_mean")),
               format_number(summary_mean(result.summary, v, "folding_percent")),
               format_number(summary_mean(result.summary, v, "jacobian_sd")));
  }
}

// ---- plot ------------------------------------------------------------------

struct PlotArgs {
  std::string results, out, checkpoint, data;
  int64_t pair = 0;
};

void cmd_plot(const PlotArgs& a) {
  fs::path summary(a.results);
  if (fs::is_directory(summary)) summary /= "summary.csv";
  if (!fs::exists(summary)) throw IoError("missing results file " + summary.string());
  const auto rows = read_summary_csv(summary);
  if (rows.empty()) throw DomainError("results file " + summary.string() + " has no rows");
  const fs::path out(a.out);
  fs::create_directories(out);
  plot_ablation_bars(rows, out / "ablation_bars.svg");
  std::vector<std::string> written{"ablation_bars.svg"};
  try {
    plot_gamma_sweep(rows, out / "gamma_sweep.svg");
    written.push_back("gamma_sweep.svg");
  } catch (const DomainError& e) {
    log::warn("gamma sweep skipped: {}", e.what());
  }
  if (!a.checkpoint.empty()) {
    TrainConfig cfg;
    auto net = load_network(a.checkpoint, &cfg);
    const auto ds = load_dataset(resolve_data(a.data));
    if (a.pair < 0 || a.pair >= static_cast<int64_t>(ds.pairs.size())) {
      throw ConfigError("out of range", "pair");
    }
    const auto& p = ds.pairs[static_cast<size_t>(a.pair)];
    const auto reg = register_pair(net, p.fixed, p.moving);
    plot_registration_panels(p.fixed.data, p.moving.data, reg.warped.squeeze(0),
                             grid::jacobian_determinant(reg.phi), out / "panels.png");
    written.push_back("panels.png");
  }
  for (const auto& w : written) fmt::print("wrote {}\n", (out / w).string());
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-guided deformable image registration"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings only");

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic phantom dataset");
  generate->add_option("--out", gen.out, "Output directory (default $DIFFREG_DATA_DIR)");
  generate->add_option("--pairs", gen.pairs, "Number of pairs")->capture_default_str();
  generate->add_option("--extent", gen.extent, "Grid size, e.g. 64x64")->capture_default_str();
  generate->add_option("--amplitude", gen.amplitude, "Peak velocity (voxels)")->capture_default_str();
  generate->add_option("--smoothness", gen.smoothness, "Velocity blur as fraction of extent")
      ->capture_default_str();
  generate->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  generate->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train (or resume) a model");
  train->add_option("--config", tr.config, "Run config JSON (defaults when omitted)");
  train->add_option("--data", tr.data, "Dataset manifest or directory (default $DIFFREG_DATA_DIR)");
  train->add_option("--out", tr.out, "Run directory")->required();

  RegisterArgs rg;
  auto* reg = app.add_subcommand("register", "Register one pair with a trained model");
  reg->add_option("--checkpoint", rg.checkpoint, "Checkpoint file")->required();
  reg->add_option("--fixed", rg.fixed, "Fixed volume (.nii/.nii.gz or raw base)")->required();
  reg->add_option("--moving", rg.moving, "Moving volume")->required();
  reg->add_option("--out", rg.out, "Output directory")->required();
  reg->add_option("--fixed-labels", rg.fixed_labels, "Fixed label map");
  reg->add_option("--moving-labels", rg.moving_labels, "Moving label map");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a model on held-out pairs");
  evaluate->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--data", ev.data, "Dataset manifest or directory");
  evaluate->add_option("--out", ev.out, "Results CSV (appended)")->required();
  evaluate->add_option("--run-id", ev.run_id, "Run id column")->capture_default_str();
  evaluate->add_flag("--all", ev.all, "Score every pair, not just the held-out split");

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "Train and score every variant and seed");
  ablate->add_option("--config", ab.config, "Base run config JSON");
  ablate->add_option("--data", ab.data, "Dataset manifest or directory");
  ablate->add_option("--out", ab.out, "Output directory")->required();
  ablate->add_option("--variants", ab.variants, "full, no_fdg, no_sdg, gamma=<g>")
      ->delimiter(',')
      ->capture_default_str();
  ablate->add_option("--seeds", ab.seeds, "Training seeds")->delimiter(',')->capture_default_str();

  PlotArgs pl;
  auto* plot = app.add_subcommand("plot", "Render figures from ablation results");
  plot->add_option("--results", pl.results, "summary.csv or the ablation directory")->required();
  plot->add_option("--out", pl.out, "Figure directory")->required();
  plot->add_option("--checkpoint", pl.checkpoint, "Also render registration panels");
  plot->add_option("--data", pl.data, "Dataset for the panels");
  plot->add_option("--pair", pl.pair, "Pair index for the panels")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 1;
  }
  log::set_level(verbose ? log::Level::Debug : quiet ? log::Level::Warn : log::Level::Info);

  try {
    if (*generate) cmd_generate(gen);
    if (*train) cmd_train(tr);
    if (*reg) cmd_register(rg);
    if (*evaluate) cmd_evaluate(ev);
    if (*ablate) cmd_ablate(ab);
    if (*plot) cmd_plot(pl);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << "\n";
    return 2;
  }
  return 0;
}
