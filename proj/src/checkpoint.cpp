#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "diffreg/errors.hpp"
#include "diffreg/pipeline.hpp"

// Checkpoint layout (little-endian):
//   "DIFFREGC" | u32 version | u64 n | n bytes JSON metadata
//   | u64 n | n bytes model archive | u64 n | n bytes optimizer archive

namespace diffreg {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'D', 'I', 'F', 'F', 'R', 'E', 'G', 'C'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw IoError("truncated checkpoint");
  return value;
}

void put_blob(std::ostream& out, const std::string& blob) {
  put_le<uint64_t>(out, blob.size());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

std::string get_blob(std::istream& in) {
  const auto n = get_le<uint64_t>(in);
  if (n > (uint64_t{1} << 34)) throw IoError("corrupt checkpoint section length");
  std::string blob(n, '\0');
  in.read(blob.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError("truncated checkpoint");
  return blob;
}

struct CheckpointSections {
  json meta;
  std::string model;
  std::string optimizer;
};

CheckpointSections read_sections(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  const auto version = get_le<uint32_t>(in);
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointSections s;
  try {
    s.meta = json::parse(get_blob(in));
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  s.model = get_blob(in);
  s.optimizer = get_blob(in);
  return s;
}

json history_json(const std::vector<EpochSummary>& history) {
  json out = json::array();
  for (const auto& h : history) {
    out.push_back({{"epoch", h.epoch}, {"steps", h.steps}, {"diffusion", h.diffusion},
                   {"score_ncc", h.score_ncc}, {"smooth", h.smooth}, {"total", h.total}});
  }
  return out;
}

void load_model(RegistrationNet& net, const std::string& blob) {
  std::istringstream stream(blob);
  torch::serialize::InputArchive archive;
  archive.load_from(stream);
  net->load(archive);
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  std::ostringstream rng_state;
  rng_state << rng_;
  const json meta{{"config", cfg_.to_json()},
                  {"epoch", epoch_},
                  {"global_step", global_step_},
                  {"history", history_json(history_)},
                  {"rng", rng_state.str()}};

  std::ostringstream model_bytes, optim_bytes;
  {
    torch::serialize::OutputArchive archive;
    net_->save(archive);
    archive.save_to(model_bytes);
  }
  {
    torch::serialize::OutputArchive archive;
    optimizer_->save(archive);
    archive.save_to(optim_bytes);
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put_le<uint32_t>(out, kVersion);
    put_blob(out, meta.dump());
    put_blob(out, model_bytes.str());
    put_blob(out, optim_bytes.str());
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Trainer Trainer::load_checkpoint(const std::filesystem::path& path) {
  auto sections = read_sections(path);
  Trainer trainer(TrainConfig::from_json(sections.meta.at("config")));
  load_model(trainer.net_, sections.model);
  {
    std::istringstream stream(sections.optimizer);
    torch::serialize::InputArchive archive;
    archive.load_from(stream);
    trainer.optimizer_->load(archive);
  }
  try {
    trainer.epoch_ = sections.meta.at("epoch").get<int64_t>();
    trainer.global_step_ = sections.meta.at("global_step").get<int64_t>();
    for (const auto& h : sections.meta.at("history")) {
      trainer.history_.push_back(EpochSummary{h.at("epoch"), h.at("steps"), h.at("diffusion"),
                                              h.at("score_ncc"), h.at("smooth"), h.at("total")});
    }
    std::istringstream rng_state(sections.meta.at("rng").get<std::string>());
    rng_state >> trainer.rng_;
    if (!rng_state) throw IoError("corrupt RNG state in checkpoint");
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  return trainer;
}

RegistrationNet load_network(const std::filesystem::path& checkpoint, TrainConfig* cfg) {
  auto sections = read_sections(checkpoint);
  const auto config = TrainConfig::from_json(sections.meta.at("config"));
  RegistrationNet net(config.backbone, config.architecture);
  load_model(net, sections.model);
  if (cfg) *cfg = config;
  return net;
}

}  // namespace diffreg
