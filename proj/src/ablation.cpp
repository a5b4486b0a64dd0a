#include "diffreg/ablation.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "diffreg/log.hpp"

#include "diffreg/errors.hpp"
#include "diffreg/pipeline.hpp"

namespace diffreg {

AblationVariant parse_variant(const std::string& name, double base_gamma) {
  if (name == "full") return {name, Architecture::Full, base_gamma};
  if (name == "no_fdg") return {name, Architecture::NoFdg, base_gamma};
  if (name == "no_sdg") return {name, Architecture::Full, 0.0};
  const std::string prefix = "gamma=";
  if (name.rfind(prefix, 0) == 0) {
    size_t used = 0;
    double gamma = std::numeric_limits<double>::quiet_NaN();
    try {
      gamma = std::stod(name.substr(prefix.size()), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != name.size() - prefix.size() || !(gamma >= 0.0)) {
      throw ConfigError("bad gamma in variant '" + name + "'", "variants");
    }
    return {name, Architecture::Full, gamma};
  }
  throw ConfigError("unknown variant '" + name + "'", "variants");
}

AblationResult run_ablation(const AblationPlan& plan, const std::vector<PairData>& train,
                            const std::vector<PairData>& test, const std::vector<int64_t>& class_ids,
                            const std::filesystem::path& out_dir) {
  if (plan.seeds.empty()) throw ConfigError("need at least one seed", "seeds");
  if (train.empty() || test.empty()) throw DomainError("ablation needs train and test pairs");
  std::vector<AblationVariant> variants;
  for (const auto& name : plan.variants) variants.push_back(parse_variant(name, plan.base.loss.gamma));

  AblationResult result;
  for (const auto& variant : variants) {
    for (uint64_t seed : plan.seeds) {
      TrainConfig cfg = plan.base;
      cfg.architecture = variant.architecture;
      cfg.loss.gamma = variant.gamma;
      cfg.seed = seed;
      Trainer trainer(cfg);
      trainer.fit(train);

      const std::string run_id = variant.name + "@seed" + std::to_string(seed);
      double dice_sum = 0.0, folding_sum = 0.0, sd_sum = 0.0, initial_sum = 0.0;
      for (const auto& pair : test) {
        auto eval = evaluate_pair(trainer.net(), pair, class_ids, run_id);
        dice_sum += eval.row.mean_dice;
        folding_sum += eval.row.folding_percent;
        sd_sum += eval.row.jacobian_sd;
        initial_sum += eval.initial_dice;
        result.rows.push_back(std::move(eval.row));
      }
      const auto n = static_cast<double>(test.size());
      const auto add = [&](const char* metric, double value) {
        result.summary.push_back({variant.name, seed, metric, value});
      };
      add("dice_mean", dice_sum / n);
      add("folding_percent", folding_sum / n);
      add("jacobian_sd", sd_sum / n);
      add("initial_dice", initial_sum / n);
      add("gamma", variant.gamma);
      add("fdg", variant.architecture == Architecture::Full ? 1.0 : 0.0);
      log::info("{}: dice {:.4f} folding {:.4f}% sd|J| {:.4f}", run_id, dice_sum / n,
                   folding_sum / n, sd_sum / n);
    }
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_results_csv(out_dir / "results.csv", class_ids, result.rows);
    write_summary_csv(out_dir / "summary.csv", result.summary);
  }
  return result;
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "variant,seed,metric,value\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.seed << ',' << r.metric << ',' << format_number(r.value) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing results file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "variant,seed,metric,value") {
    throw IoError(path.string() + " is not an ablation summary");
  }
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream cells(line);
    SummaryRow row;
    std::string seed, value;
    if (!std::getline(cells, row.variant, ',') || !std::getline(cells, seed, ',') ||
        !std::getline(cells, row.metric, ',') || !std::getline(cells, value)) {
      throw IoError("malformed row in " + path.string() + ": " + line);
    }
    try {
      row.seed = std::stoull(seed);
      row.value = std::stod(value);
    } catch (const std::exception&) {
      throw IoError("malformed row in " + path.string() + ": " + line);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

double summary_mean(const std::vector<SummaryRow>& rows, const std::string& variant,
                    const std::string& metric) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.variant == variant && r.metric == metric) {
      sum += r.value;
      ++n;
    }
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

double summary_value(const std::vector<SummaryRow>& rows, const std::string& variant,
                     uint64_t seed, const std::string& metric) {
  for (const auto& r : rows) {
    if (r.variant == variant && r.seed == seed && r.metric == metric) return r.value;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace diffreg
