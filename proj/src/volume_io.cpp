#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "json.hpp"

#include "diffreg/data.hpp"

namespace diffreg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path with_suffix(const fs::path& base, const char* suffix) {
  return fs::path(base.string() + suffix);
}

template <typename T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_nifti(const fs::path& path) {
  const auto name = path.filename().string();
  return ends_with(name, ".nii") || ends_with(name, ".nii.gz");
}

/// gzread reads plain files transparently, so one path serves .nii and .nii.gz.
std::vector<char> slurp(const fs::path& path) {
  gzFile file = gzopen(path.c_str(), "rb");
  if (!file) throw IoError("cannot open " + path.string());
  std::vector<char> bytes;
  std::array<char, 1 << 16> chunk{};
  int n = 0;
  while ((n = gzread(file, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0) {
    bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + n);
  }
  const bool failed = n < 0;
  gzclose(file);
  if (failed) throw IoError("failed reading " + path.string());
  return bytes;
}

template <typename T>
T read_at(const std::vector<char>& bytes, size_t offset, bool swap) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return swap ? byteswap_value(v) : v;
}

template <typename T>
void convert_voxels(const std::vector<char>& bytes, size_t offset, int64_t count, bool swap,
                    double* out) {
  for (int64_t i = 0; i < count; ++i) {
    out[i] = static_cast<double>(read_at<T>(bytes, offset + static_cast<size_t>(i) * sizeof(T), swap));
  }
}

json volume_sidecar(const Volume& volume) {
  return json{{"extent", volume.extent()},
              {"spacing", volume.spacing},
              {"channels", volume.channels()},
              {"dtype", "float32"},
              {"endianness", "little"},
              {"label", volume.is_label}};
}

}  // namespace

void write_raw_volume(const fs::path& base, const Volume& volume) {
  auto data = volume.data.detach().to(torch::kFloat32).contiguous();
  std::vector<float> values(data.data_ptr<float>(), data.data_ptr<float>() + data.numel());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : values) v = byteswap_value(v);
  }
  std::ofstream raw(with_suffix(base, ".raw"), std::ios::binary | std::ios::trunc);
  if (!raw) throw IoError("cannot write " + with_suffix(base, ".raw").string());
  raw.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  std::ofstream side(with_suffix(base, ".json"), std::ios::trunc);
  side << volume_sidecar(volume).dump(2) << '\n';
  if (!raw || !side) throw IoError("failed writing volume " + base.string());
}

Volume read_raw_volume(const fs::path& base) {
  const auto side_path = with_suffix(base, ".json");
  std::ifstream side(side_path);
  if (!side) throw IoError("missing volume sidecar " + side_path.string());
  json meta;
  try {
    side >> meta;
  } catch (const json::exception& e) {
    throw IoError("malformed sidecar " + side_path.string() + ": " + e.what());
  }
  std::vector<int64_t> shape;
  std::vector<double> spacing;
  bool label = false;
  try {
    if (meta.at("dtype").get<std::string>() != "float32") {
      throw IoError("unsupported dtype in " + side_path.string());
    }
    shape.push_back(meta.value("channels", int64_t{1}));
    for (auto e : meta.at("extent").get<std::vector<int64_t>>()) shape.push_back(e);
    spacing = meta.at("spacing").get<std::vector<double>>();
    label = meta.value("label", false);
  } catch (const json::exception& e) {
    throw IoError("malformed sidecar " + side_path.string() + ": " + e.what());
  }
  int64_t count = 1;
  for (auto s : shape) count *= s;

  const auto raw_path = with_suffix(base, ".raw");
  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw IoError("missing volume data " + raw_path.string());
  std::vector<float> values(static_cast<size_t>(count));
  raw.read(reinterpret_cast<char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (raw.gcount() != static_cast<std::streamsize>(values.size() * sizeof(float))) {
    throw IoError("truncated volume data " + raw_path.string());
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : values) v = byteswap_value(v);
  }
  auto data = torch::from_blob(values.data(), shape, torch::kFloat32).clone();
  return Volume::make(data, spacing, label);
}

Volume read_nifti(const fs::path& path, int64_t frame) {
  const auto bytes = slurp(path);
  if (bytes.size() < 348) throw IoError("truncated NIfTI header in " + path.string());
  bool swap = false;
  if (read_at<int32_t>(bytes, 0, false) != 348) {
    if (read_at<int32_t>(bytes, 0, true) != 348) throw IoError(path.string() + " is not NIfTI-1");
    swap = true;
  }
  if (std::memcmp(bytes.data() + 344, "n+1", 3) != 0) {
    throw IoError(path.string() + " is not a single-file NIfTI-1 volume");
  }
  std::array<int64_t, 8> dim{};
  std::array<double, 8> pixdim{};
  for (size_t i = 0; i < 8; ++i) {
    dim[i] = read_at<int16_t>(bytes, 40 + 2 * i, swap);
    // Header spacings are float32; the shortest decimal form recovers the
    // value that was written (3.15 rather than 3.1500000953674316).
    pixdim[i] = std::stod(fmt::format("{}", read_at<float>(bytes, 76 + 4 * i, swap)));
  }
  const auto datatype = read_at<int16_t>(bytes, 70, swap);
  const auto vox_offset = static_cast<size_t>(read_at<float>(bytes, 108, swap));
  double slope = read_at<float>(bytes, 112, swap);
  const double inter = read_at<float>(bytes, 116, swap);
  if (slope == 0.0 || !std::isfinite(slope)) slope = 1.0;

  if (dim[0] < 2 || dim[0] > 4) throw IoError("unsupported NIfTI rank in " + path.string());
  const int64_t nx = dim[1], ny = dim[2], nz = dim[0] >= 3 ? std::max<int64_t>(dim[3], 1) : 1;
  const int64_t nt = dim[0] == 4 ? std::max<int64_t>(dim[4], 1) : 1;
  if (frame < 0 || frame >= nt) throw DomainError("NIfTI frame index out of range");
  const int64_t count = nx * ny * nz;

  size_t width = 0;
  switch (datatype) {
    case 2: case 256: width = 1; break;
    case 4: case 512: width = 2; break;
    case 8: case 16: case 768: width = 4; break;
    case 64: width = 8; break;
    default: throw IoError("unsupported NIfTI datatype " + std::to_string(datatype));
  }
  const size_t offset = vox_offset + static_cast<size_t>(frame * count) * width;
  if (bytes.size() < offset + static_cast<size_t>(count) * width) {
    throw IoError("truncated NIfTI voxel data in " + path.string());
  }
  auto data = torch::empty({count}, torch::kFloat64);
  auto* out = data.data_ptr<double>();
  switch (datatype) {
    case 2: convert_voxels<uint8_t>(bytes, offset, count, swap, out); break;
    case 256: convert_voxels<int8_t>(bytes, offset, count, swap, out); break;
    case 4: convert_voxels<int16_t>(bytes, offset, count, swap, out); break;
    case 512: convert_voxels<uint16_t>(bytes, offset, count, swap, out); break;
    case 8: convert_voxels<int32_t>(bytes, offset, count, swap, out); break;
    case 768: convert_voxels<uint32_t>(bytes, offset, count, swap, out); break;
    case 16: convert_voxels<float>(bytes, offset, count, swap, out); break;
    case 64: convert_voxels<double>(bytes, offset, count, swap, out); break;
  }
  data = data * slope + inter;
  auto spacing_of = [&](size_t i) { return pixdim[i] > 0.0 ? pixdim[i] : 1.0; };
  return Volume::make(data.reshape({1, nz, ny, nx}).to(torch::kFloat32),
                      {spacing_of(3), spacing_of(2), spacing_of(1)});
}

void write_nifti(const fs::path& path, const Volume& volume) {
  if (volume.channels() != 1) throw ShapeError("NIfTI writer handles single-channel volumes");
  auto ext = volume.extent();
  auto spacing = volume.spacing;
  if (ext.size() == 2) {
    ext.insert(ext.begin(), 1);
    spacing.insert(spacing.begin(), 1.0);
  }
  std::array<char, 352> header{};
  auto put = [&header](size_t offset, auto value) {
    std::memcpy(header.data() + offset, &value, sizeof(value));
  };
  put(0, int32_t{348});
  const std::array<int16_t, 8> dim{3, static_cast<int16_t>(ext[2]), static_cast<int16_t>(ext[1]),
                                   static_cast<int16_t>(ext[0]), 1, 1, 1, 1};
  for (size_t i = 0; i < 8; ++i) put(40 + 2 * i, dim[i]);
  put(70, int16_t{16});
  put(72, int16_t{32});
  const std::array<float, 8> pixdim{1.0f, static_cast<float>(spacing[2]),
                                    static_cast<float>(spacing[1]),
                                    static_cast<float>(spacing[0]), 1, 1, 1, 1};
  for (size_t i = 0; i < 8; ++i) put(76 + 4 * i, pixdim[i]);
  put(108, 352.0f);
  put(112, 1.0f);
  std::memcpy(header.data() + 344, "n+1", 4);

  auto data = volume.data.detach().to(torch::kFloat32).contiguous();
  const bool gz = ends_with(path.filename().string(), ".gz");
  gzFile file = gzopen(path.c_str(), gz ? "wb" : "wbT");
  if (!file) throw IoError("cannot write " + path.string());
  bool ok = gzwrite(file, header.data(), header.size()) == static_cast<int>(header.size());
  const auto nbytes = static_cast<unsigned>(data.numel() * sizeof(float));
  ok = ok && gzwrite(file, data.data_ptr<float>(), nbytes) == static_cast<int>(nbytes);
  ok = (gzclose(file) == Z_OK) && ok;
  if (!ok) throw IoError("failed writing " + path.string());
}

Volume read_volume(const fs::path& path) {
  if (is_nifti(path)) return read_nifti(path);
  auto base = path;
  if (path.extension() == ".raw" || path.extension() == ".json") base.replace_extension();
  return read_raw_volume(base);
}

uint64_t pair_seed(uint64_t dataset_seed, int64_t index) {
  std::seed_seq seq{static_cast<uint32_t>(dataset_seed), static_cast<uint32_t>(dataset_seed >> 32),
                    static_cast<uint32_t>(index)};
  std::array<uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (static_cast<uint64_t>(words[0]) << 32) | words[1];
}

namespace {

PairData pair_from_phantom(std::string id, PhantomPair phantom) {
  return PairData{std::move(id),       std::move(phantom.fixed),
                  std::move(phantom.moving), std::move(phantom.fixed_labels),
                  std::move(phantom.moving_labels), std::move(phantom.ground_truth)};
}

std::string pair_name(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%04lld", static_cast<long long>(index));
  return buf;
}

json phantom_json(const PhantomSpec& spec) {
  return json{{"extent", spec.extent},
              {"spacing", spec.spacing},
              {"amplitude", spec.amplitude},
              {"smoothness", spec.smoothness},
              {"squaring_steps", spec.squaring_steps},
              {"texture", spec.texture}};
}

PhantomSpec phantom_from_json(const json& j) {
  PhantomSpec spec;
  spec.extent = j.at("extent").get<Extent>();
  spec.spacing = j.value("spacing", std::vector<double>{});
  spec.amplitude = j.value("amplitude", spec.amplitude);
  spec.smoothness = j.value("smoothness", spec.smoothness);
  spec.squaring_steps = j.value("squaring_steps", spec.squaring_steps);
  spec.texture = j.value("texture", spec.texture);
  return spec;
}

const std::vector<int64_t> kPhantomClasses{kLabelBloodPool, kLabelMyocardium,
                                           kLabelRightVentricle};

}  // namespace

Dataset generate_dataset(const GeneratorOptions& options) {
  if (options.pairs < 1) throw ConfigError("must be >= 1", "pairs");
  Dataset dataset{{}, kPhantomClasses, options.phantom.extent};
  for (int64_t i = 0; i < options.pairs; ++i) {
    dataset.pairs.push_back(pair_from_phantom(
        pair_name(i), generate_phantom_pair(pair_seed(options.seed, i), options.phantom)));
  }
  return dataset;
}

Dataset generate_dataset(const fs::path& out_dir, const GeneratorOptions& options, bool force) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
    throw IoError("output directory " + out_dir.string() + " exists; pass --force to overwrite");
  }
  fs::create_directories(out_dir);
  auto dataset = generate_dataset(options);

  json entries = json::array();
  for (size_t i = 0; i < dataset.pairs.size(); ++i) {
    const auto& pair = dataset.pairs[i];
    const auto dir = out_dir / pair.id;
    fs::create_directories(dir);
    write_raw_volume(dir / "fixed", pair.fixed);
    write_raw_volume(dir / "moving", pair.moving);
    write_raw_volume(dir / "fixed_labels", *pair.fixed_labels);
    write_raw_volume(dir / "moving_labels", *pair.moving_labels);
    write_raw_volume(dir / "field",
                     Volume::make(pair.ground_truth->vectors, pair.fixed.spacing, false));
    entries.push_back(json{{"id", pair.id},
                           {"seed", pair_seed(options.seed, static_cast<int64_t>(i))},
                           {"fixed", pair.id + "/fixed"},
                           {"moving", pair.id + "/moving"},
                           {"fixed_labels", pair.id + "/fixed_labels"},
                           {"moving_labels", pair.id + "/moving_labels"},
                           {"field", pair.id + "/field"}});
  }
  json manifest{{"format", "diffreg-dataset"},
                {"version", 1},
                {"seed", options.seed},
                {"class_ids", dataset.class_ids},
                {"generator", phantom_json(options.phantom)},
                {"pairs", entries}};
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("failed writing manifest in " + out_dir.string());
  return dataset;
}

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing dataset manifest " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto root = manifest_path.parent_path();
  Dataset dataset;
  try {
    if (manifest.value("format", std::string{}) != "diffreg-dataset") {
      throw IoError(manifest_path.string() + " is not a dataset manifest");
    }
    dataset.class_ids = manifest.value("class_ids", kPhantomClasses);
    std::optional<PhantomSpec> generator;
    if (manifest.contains("generator")) generator = phantom_from_json(manifest.at("generator"));
    std::optional<std::pair<std::vector<double>, Extent>> preprocess;
    if (manifest.contains("preprocess")) {
      const auto& p = manifest.at("preprocess");
      preprocess.emplace(p.at("spacing").get<std::vector<double>>(), p.at("extent").get<Extent>());
    }
    auto load = [&](const json& entry, const char* key, bool label) -> std::optional<Volume> {
      if (!entry.contains(key)) return std::nullopt;
      const auto path = root / entry.at(key).get<std::string>();
      auto volume = read_volume(path);
      if (is_nifti(path)) {
        volume.is_label = label;
        if (label) volume = Volume::make(torch::round(volume.data), volume.spacing, true);
        if (preprocess) volume = preprocess_volume(volume, preprocess->first, preprocess->second);
        else if (!label) volume = normalize_intensity(volume);
      }
      return volume;
    };
    for (const auto& entry : manifest.at("pairs")) {
      const auto id = entry.at("id").get<std::string>();
      if (!entry.contains("fixed")) {
        if (!generator) throw IoError("pair " + id + " has neither paths nor a generator block");
        dataset.pairs.push_back(pair_from_phantom(
            id, generate_phantom_pair(entry.at("seed").get<uint64_t>(), *generator)));
        continue;
      }
      PairData pair{id, *load(entry, "fixed", false), *load(entry, "moving", false),
                    load(entry, "fixed_labels", true), load(entry, "moving_labels", true),
                    std::nullopt};
      if (auto field = load(entry, "field", false)) {
        pair.ground_truth = DisplacementField::make(field->data);
      }
      if (pair.fixed.extent() != pair.moving.extent()) {
        throw ShapeError("pair " + id + ": fixed and moving extents differ");
      }
      dataset.pairs.push_back(std::move(pair));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (dataset.pairs.empty()) throw IoError("manifest " + manifest_path.string() + " lists no pairs");
  dataset.extent = dataset.pairs.front().fixed.extent();
  return dataset;
}

}  // namespace diffreg
