#include "testing.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "diffreg/data.hpp"
#include "diffreg/errors.hpp"
#include "diffreg/metrics.hpp"

using namespace diffreg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "diffreg_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PhantomSpec spec_of(Extent extent, double amplitude = 3.0) {
  PhantomSpec s;
  s.extent = std::move(extent);
  s.amplitude = amplitude;
  return s;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("zero amplitude gives an identical pair and a zero field") {
    auto p = generate_phantom_pair(3, spec_of({32, 32}, 0.0));
    CHECK(torch::equal(p.fixed.data, p.moving.data));
    CHECK(torch::equal(p.fixed_labels.data, p.moving_labels.data));
    CHECK(p.ground_truth.vectors.abs().max().item<double>() == 0.0);
  }

  TEST_CASE("ground-truth fields never fold, initial DICE is below 1") {
    const std::vector<int64_t> classes{kLabelBloodPool, kLabelMyocardium, kLabelRightVentricle};
    for (uint64_t seed = 0; seed < 6; ++seed) {
      auto p = generate_phantom_pair(seed, spec_of({48, 48}, 4.0));
      auto det = grid::jacobian_determinant(p.ground_truth.batched().to(torch::kFloat64));
      CHECK(det.min().item<double>() > 0.0);
      CHECK(folding_percent(p.ground_truth) == 0.0);
      CHECK(dice(p.moving_labels, p.fixed_labels, classes).mean < 1.0);
      CHECK(p.fixed.data.min().item<double>() >= -1.0);
      CHECK(p.fixed.data.max().item<double>() <= 1.0);
      CHECK(p.moving.data.min().item<double>() >= -1.0);
      CHECK(p.moving.data.max().item<double>() <= 1.0);
    }
    auto p3 = generate_phantom_pair(1, spec_of({16, 16, 8}, 2.0));
    CHECK(folding_percent(p3.ground_truth) == 0.0);
  }

  TEST_CASE("moving image is the fixed image warped by the ground truth") {
    auto p = generate_phantom_pair(4, spec_of({32, 32}));
    auto warped = grid::warp(p.fixed, p.ground_truth);
    CHECK((warped.data - p.moving.data).abs().max().item<double>() < 1e-5);
    auto warped_labels = grid::warp(p.fixed_labels, p.ground_truth, grid::Interpolation::Nearest);
    CHECK(torch::equal(warped_labels.data, p.moving_labels.data));
  }

  TEST_CASE("generation is deterministic per seed") {
    auto a = generate_phantom_pair(9, spec_of({32, 32}));
    auto b = generate_phantom_pair(9, spec_of({32, 32}));
    auto c = generate_phantom_pair(10, spec_of({32, 32}));
    CHECK(torch::equal(a.fixed.data, b.fixed.data));
    CHECK(torch::equal(a.moving.data, b.moving.data));
    CHECK(torch::equal(a.ground_truth.vectors, b.ground_truth.vectors));
    CHECK(!torch::equal(a.moving.data, c.moving.data));
  }

  TEST_CASE("unusable extents are config errors") {
    CHECK_THROWS_AS(generate_phantom_pair(0, spec_of({4, 32})), ConfigError);
    CHECK_THROWS_AS(generate_phantom_pair(0, spec_of({32})), ConfigError);
    CHECK_THROWS_AS(generate_phantom_pair(0, spec_of({32, 32}, -1.0)), ConfigError);
  }

  TEST_CASE("velocity integration of zero is zero") {
    auto v = torch::zeros({1, 2, 8, 8}, torch::kFloat64);
    CHECK(integrate_velocity(v, 7).abs().max().item<double>() == 0.0);
  }

  TEST_CASE("preprocess at target geometry only rescales intensities") {
    torch::manual_seed(51);
    auto raw = torch::rand({1, 6, 8, 4}, torch::kFloat64);
    raw[0][0][0][0] = 0.0;
    raw[0][5][7][3] = 1.0;
    auto v = Volume::make(raw, {1.5, 1.5, 3.15});
    auto out = preprocess_volume(v, {1.5, 1.5, 3.15}, {6, 8, 4});
    CHECK((out.data - (2.0 * raw - 1.0)).abs().max().item<double>() < 1e-12);
  }

  TEST_CASE("constant images normalise to -1") {
    auto v = Volume::make(torch::full({1, 8, 8}, 3.0));
    auto out = preprocess_volume(v, {1.0, 1.0}, {8, 8});
    CHECK((out.data + 1.0).abs().max().item<double>() == 0.0);
  }

  TEST_CASE("downsampling a linear ramp keeps it linear") {
    auto ramp = (0.25 * torch::arange(16, torch::kFloat64) + 1.0).reshape({1, 1, 16}).expand({1, 8, 16}).contiguous();
    auto out = resample_to_spacing(Volume::make(ramp, {1.0, 1.0}), {1.0, 2.0});
    REQUIRE(out.extent() == Extent{8, 8});
    for (int64_t j = 1; j < 7; ++j) {
      CHECK(std::abs(out.data[0][4][j].item<double>() - (0.25 * 2.0 * static_cast<double>(j) + 1.0)) < 1e-6);
    }
  }

  TEST_CASE("preprocessed intensities stay in [-1, 1]") {
    torch::manual_seed(52);
    for (int trial = 0; trial < 4; ++trial) {
      auto raw = 100.0 * torch::randn({1, 10, 14, 6}, torch::kFloat64);
      auto out = preprocess_volume(Volume::make(raw, {1.2, 0.9, 2.5}), {1.5, 1.5, 3.15}, {8, 8, 6});
      CHECK(out.extent() == Extent{8, 8, 6});
      CHECK(out.data.min().item<double>() >= -1.0);
      CHECK(out.data.max().item<double>() <= 1.0);
    }
  }

  TEST_CASE("label volumes keep integer ids through preprocessing") {
    auto labels = torch::zeros({1, 12, 12}, torch::kFloat64);
    labels.index_put_({0, torch::indexing::Slice(3, 9), torch::indexing::Slice(3, 9)}, 2.0);
    auto out = preprocess_volume(Volume::make(labels, {1.0, 1.0}, true), {1.5, 1.5}, {10, 10});
    CHECK(out.is_label);
    CHECK(torch::equal(out.data, torch::round(out.data)));
    CHECK(out.data.max().item<double>() == 2.0);
  }

  TEST_CASE("non-positive spacing is a domain error") {
    auto v = Volume::make(torch::zeros({1, 4, 4}));
    CHECK_THROWS_AS(resample_to_spacing(v, {1.0, 0.0}), DomainError);
    CHECK_THROWS_AS(Volume::make(torch::zeros({1, 4, 4}), {1.0, -2.0}), DomainError);
    CHECK_THROWS_AS(Volume::make(torch::full({1, 4, 4}, 0.5), {}, true), DomainError);
  }

  TEST_CASE("split sizes") {
    std::vector<int> items(100);
    std::iota(items.begin(), items.end(), 0);
    auto [train, test] = split_dataset(items, 0.9, 5);
    CHECK(train.size() == 90);
    CHECK(test.size() == 10);
    auto again = split_dataset(items, 0.9, 5);
    CHECK(again.first == train);
    CHECK(again.second == test);
    std::set<int> all(train.begin(), train.end());
    all.insert(test.begin(), test.end());
    CHECK(all.size() == 100);
    auto [one_train, one_test] = split_dataset(std::vector<int>{7}, 0.9);
    CHECK(one_train.size() == 1);
    CHECK(one_test.empty());
    CHECK_THROWS_AS(split_dataset(std::vector<int>{}, 0.9), DomainError);
    CHECK_THROWS_AS(split_dataset(items, 0.0), ConfigError);
  }

  TEST_CASE("raw volume round trip") {
    const auto dir = fresh_dir("raw");
    torch::manual_seed(53);
    auto v = Volume::make(torch::randn({2, 5, 6, 3}), {1.5, 1.5, 3.15});
    write_raw_volume(dir / "vol", v);
    auto back = read_raw_volume(dir / "vol");
    CHECK(torch::equal(back.data, v.data));
    CHECK(back.spacing == v.spacing);
    CHECK(read_volume(dir / "vol").extent() == v.extent());
    CHECK_THROWS_AS(read_raw_volume(dir / "missing"), IoError);
  }

  TEST_CASE("NIfTI round trip, plain and gzip") {
    const auto dir = fresh_dir("nifti");
    torch::manual_seed(54);
    auto v = Volume::make(torch::randn({1, 4, 6, 5}), {3.15, 1.5, 1.25});
    for (const char* name : {"vol.nii", "vol.nii.gz"}) {
      write_nifti(dir / name, v);
      auto back = read_volume(dir / name);
      CHECK(torch::equal(back.data, v.data));
      CHECK(back.spacing == v.spacing);
    }
    std::ofstream(dir / "junk.nii") << "not a volume";
    CHECK_THROWS_AS(read_nifti(dir / "junk.nii"), IoError);
  }

  TEST_CASE("on-disk dataset matches the in-memory generator") {
    const auto dir = fresh_dir("dataset");
    GeneratorOptions opts;
    opts.phantom.extent = {16, 16};
    opts.pairs = 3;
    opts.seed = 7;
    generate_dataset(dir, opts, true);
    auto loaded = load_dataset(dir / "manifest.json");
    auto memory = generate_dataset(opts);
    REQUIRE(loaded.pairs.size() == 3);
    CHECK(loaded.class_ids == memory.class_ids);
    for (size_t i = 0; i < 3; ++i) {
      CHECK(loaded.pairs[i].id == memory.pairs[i].id);
      CHECK(torch::equal(loaded.pairs[i].moving.data, memory.pairs[i].moving.data));
      CHECK(torch::equal(loaded.pairs[i].fixed_labels->data, memory.pairs[i].fixed_labels->data));
    }
  }

  TEST_CASE("generation refuses a non-empty directory and is reproducible") {
    const auto dir = fresh_dir("refuse");
    GeneratorOptions opts;
    opts.phantom.extent = {16, 16};
    opts.pairs = 2;
    generate_dataset(dir, opts);
    const auto first = slurp(dir / "manifest.json");
    CHECK_THROWS_AS(generate_dataset(dir, opts), IoError);
    generate_dataset(dir, opts, true);
    CHECK(slurp(dir / "manifest.json") == first);
  }

  TEST_CASE("seed-only manifest entries are regenerated") {
    const auto dir = fresh_dir("seed_only");
    GeneratorOptions opts;
    opts.phantom.extent = {16, 16};
    opts.pairs = 2;
    opts.seed = 3;
    generate_dataset(dir, opts, true);
    auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    for (auto& p : manifest["pairs"]) {
      for (const char* key : {"fixed", "moving", "fixed_labels", "moving_labels", "field"}) p.erase(key);
    }
    std::ofstream(dir / "seeds.json") << manifest.dump(2);
    auto from_seeds = load_dataset(dir / "seeds.json");
    auto memory = generate_dataset(opts);
    CHECK(torch::equal(from_seeds.pairs[1].moving.data, memory.pairs[1].moving.data));
  }

  TEST_CASE("malformed manifests are IO errors") {
    const auto dir = fresh_dir("bad_manifest");
    std::ofstream(dir / "m.json") << "{ not json";
    CHECK_THROWS_AS(load_dataset(dir / "m.json"), IoError);
    CHECK_THROWS_AS(load_dataset(dir / "absent.json"), IoError);
  }
}
