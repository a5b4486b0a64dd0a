#include "diffreg/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "diffreg/errors.hpp"

namespace diffreg {

using nlohmann::json;

std::string to_string(Architecture arch) { return arch == Architecture::Full ? "full" : "no_fdg"; }

Architecture parse_architecture(const std::string& name) {
  if (name == "full") return Architecture::Full;
  if (name == "no_fdg") return Architecture::NoFdg;
  throw ConfigError("unknown architecture '" + name + "' (expected full or no_fdg)",
                    "architecture");
}

void TrainConfig::validate() const {
  loss.validate();
  (void)schedule();
  backbone.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("must be > 0", "learning_rate");
  }
  if (epochs < 1) throw ConfigError("must be >= 1", "epochs");
  if (batch_size < 1) throw ConfigError("must be >= 1", "batch_size");
  if (!(grad_clip >= 0.0)) throw ConfigError("must be >= 0", "grad_clip");
  if (max_steps < 0) throw ConfigError("must be >= 0", "max_steps");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("must lie in (0, 1]", "train_fraction");
  }
  if (threads < 1) throw ConfigError("must be >= 1", "threads");
}

NoiseSchedule TrainConfig::schedule() const {
  return NoiseSchedule::linear(beta_start, beta_end, timesteps);
}

json TrainConfig::to_json() const {
  return json{{"lambda", loss.lambda},
              {"lambda_phi", loss.lambda_phi},
              {"gamma", loss.gamma},
              {"ncc_window", loss.ncc_window},
              {"beta_start", beta_start},
              {"beta_end", beta_end},
              {"timesteps", timesteps},
              {"backbone",
               {{"spatial_dims", backbone.spatial_dims},
                {"levels", backbone.levels},
                {"base_channels", backbone.base_channels},
                {"channel_multipliers", backbone.channel_multipliers},
                {"time_embed_dim", backbone.time_embed_dim},
                {"groupnorm_groups", backbone.groupnorm_groups}}},
              {"architecture", to_string(architecture)},
              {"learning_rate", learning_rate},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"seed", seed},
              {"grad_clip", grad_clip},
              {"max_steps", max_steps},
              {"train_fraction", train_fraction},
              {"threads", threads}};
}

namespace {

template <typename T>
void read_field(const json& j, const std::string& key, const std::string& path, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("has the wrong type", path);
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& prefix) {
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) throw ConfigError("unknown field", prefix + item.key());
  }
}

}  // namespace

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  reject_unknown(j,
                 {"lambda", "lambda_phi", "gamma", "ncc_window", "beta_start", "beta_end",
                  "timesteps", "backbone", "architecture", "learning_rate", "epochs",
                  "batch_size", "seed", "grad_clip", "max_steps", "train_fraction", "threads"},
                 "");
  TrainConfig cfg;
  read_field(j, "lambda", "lambda", cfg.loss.lambda);
  read_field(j, "lambda_phi", "lambda_phi", cfg.loss.lambda_phi);
  read_field(j, "gamma", "gamma", cfg.loss.gamma);
  read_field(j, "ncc_window", "ncc_window", cfg.loss.ncc_window);
  read_field(j, "beta_start", "beta_start", cfg.beta_start);
  read_field(j, "beta_end", "beta_end", cfg.beta_end);
  read_field(j, "timesteps", "timesteps", cfg.timesteps);
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    if (!b.is_object()) throw ConfigError("must be an object", "backbone");
    reject_unknown(b,
                   {"spatial_dims", "levels", "base_channels", "channel_multipliers",
                    "time_embed_dim", "groupnorm_groups"},
                   "backbone.");
    auto& bb = cfg.backbone;
    read_field(b, "spatial_dims", "backbone.spatial_dims", bb.spatial_dims);
    read_field(b, "levels", "backbone.levels", bb.levels);
    read_field(b, "base_channels", "backbone.base_channels", bb.base_channels);
    read_field(b, "channel_multipliers", "backbone.channel_multipliers", bb.channel_multipliers);
    read_field(b, "time_embed_dim", "backbone.time_embed_dim", bb.time_embed_dim);
    read_field(b, "groupnorm_groups", "backbone.groupnorm_groups", bb.groupnorm_groups);
  }
  std::string arch = to_string(cfg.architecture);
  read_field(j, "architecture", "architecture", arch);
  cfg.architecture = parse_architecture(arch);
  read_field(j, "learning_rate", "learning_rate", cfg.learning_rate);
  read_field(j, "epochs", "epochs", cfg.epochs);
  read_field(j, "batch_size", "batch_size", cfg.batch_size);
  read_field(j, "seed", "seed", cfg.seed);
  read_field(j, "grad_clip", "grad_clip", cfg.grad_clip);
  read_field(j, "max_steps", "max_steps", cfg.max_steps);
  read_field(j, "train_fraction", "train_fraction", cfg.train_fraction);
  read_field(j, "threads", "threads", cfg.threads);
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("not valid JSON: ") + e.what(), path.string());
  }
  return from_json(j);
}

void TrainConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  out << to_json().dump(2) << '\n';
  if (!out) throw IoError("failed writing config " + path.string());
}

TrainConfig TrainConfig::paper_scale() {
  TrainConfig cfg;
  cfg.backbone.spatial_dims = 3;
  cfg.backbone.levels = 4;
  cfg.backbone.base_channels = 32;
  cfg.backbone.channel_multipliers = {1, 2, 4, 8};
  cfg.backbone.time_embed_dim = 64;
  cfg.backbone.groupnorm_groups = 8;
  cfg.epochs = 700;
  return cfg;
}

}  // namespace diffreg
