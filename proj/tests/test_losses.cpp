#include "testing.hpp"

#include "diffreg/errors.hpp"
#include "diffreg/losses.hpp"
#include "oracles.hpp"

using namespace diffreg;
using torch::indexing::Slice;

namespace {

torch::Tensor interior(const torch::Tensor& t, int64_t r) {
  std::vector<torch::indexing::TensorIndex> idx{Slice(), Slice()};
  for (int64_t d = 2; d < t.dim(); ++d) idx.emplace_back(Slice(r, -r));
  return t.index(idx);
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("self-correlation and affine images score 1 in the interior") {
    torch::manual_seed(31);
    auto a = torch::randn({1, 1, 9, 9, 9}, torch::kFloat64);
    CHECK((interior(local_ncc_map(a, a, 3), 1) - 1.0).abs().max().item<double>() < 1e-6);
    CHECK((interior(local_ncc_map(a, 2.0 * a + 3.0, 3), 1) - 1.0).abs().max().item<double>() < 1e-6);
    auto a2 = torch::randn({1, 1, 12, 12}, torch::kFloat64);
    CHECK((interior(local_ncc_map(a2, a2, 5), 2) - 1.0).abs().max().item<double>() < 1e-6);
  }

  TEST_CASE("random 7^3 pair matches the sliding-window oracle") {
    torch::manual_seed(32);
    auto a = torch::randn({1, 1, 7, 7, 7}, torch::kFloat64);
    auto b = torch::randn({1, 1, 7, 7, 7}, torch::kFloat64);
    auto map = local_ncc_map(a, b, 3)[0][0];
    CHECK((map - oracle::ncc3(a[0][0], b[0][0], 3)).abs().max().item<double>() < 1e-6);
    auto map5 = local_ncc_map(a, b, 5)[0][0];
    CHECK((map5 - oracle::ncc3(a[0][0], b[0][0], 5)).abs().max().item<double>() < 1e-6);
  }

  TEST_CASE("map is symmetric and bounded") {
    torch::manual_seed(33);
    auto a = torch::randn({2, 1, 10, 10}, torch::kFloat64);
    auto b = 0.3 * a + torch::randn({2, 1, 10, 10}, torch::kFloat64);
    auto ab = local_ncc_map(a, b, 9);
    CHECK((ab - local_ncc_map(b, a, 9)).abs().max().item<double>() < 1e-12);
    CHECK(ab.min().item<double>() >= 0.0);
    CHECK(ab.max().item<double>() <= 1.0);
  }

  TEST_CASE("constant windows score zero") {
    auto flat = torch::full({1, 1, 6, 6}, 0.5, torch::kFloat64);
    torch::manual_seed(34);
    auto noise = torch::randn({1, 1, 6, 6}, torch::kFloat64);
    // Border windows see the zero padding, so only interior windows are flat.
    using torch::indexing::Slice;
    const auto interior = [](const torch::Tensor& m) { return m.index({0, 0, Slice(1, 5), Slice(1, 5)}); };
    CHECK(interior(local_ncc_map(flat, noise, 3)).abs().max().item<double>() == 0.0);
    CHECK(interior(local_ncc_map(flat, flat, 3)).abs().max().item<double>() == 0.0);
  }

  TEST_CASE("score weighting examples") {
    torch::manual_seed(35);
    auto w = torch::randn({1, 1, 8, 8}, torch::kFloat64);
    auto f = torch::randn({1, 1, 8, 8}, torch::kFloat64);
    const auto mean_ncc = local_ncc_map(w, f, 3).mean().item<double>();
    LossWeights lw;
    lw.ncc_window = 3;
    lw.gamma = 1.0;
    CHECK(score_ncc_loss(w, f, torch::zeros_like(w), lw).item<double>() ==
          doctest::Approx(-0.5 * mean_ncc).epsilon(1e-12));
    CHECK(std::abs(score_ncc_loss(w, f, torch::full_like(w, 20.0), lw).item<double>() + mean_ncc) < 1e-8);
    lw.gamma = 0.0;
    auto s = torch::randn({1, 1, 8, 8}, torch::kFloat64);
    CHECK(score_ncc_loss(w, f, s, lw).item<double>() == doctest::Approx(-mean_ncc).epsilon(1e-12));
  }

  TEST_CASE("gamma 0 is bit-identical to the unweighted loss") {
    torch::manual_seed(36);
    auto w = torch::randn({1, 1, 8, 8});
    auto f = torch::randn({1, 1, 8, 8});
    LossWeights lw;
    lw.gamma = 0.0;
    auto weighted = score_ncc_loss(w, f, 5.0 * torch::randn({1, 1, 8, 8}), lw);
    auto vanilla = (-local_ncc_map(w, f, lw.ncc_window)).mean();
    CHECK(torch::equal(weighted, vanilla));
  }

  TEST_CASE("raising the score never shrinks a voxel's contribution") {
    torch::manual_seed(37);
    auto w = torch::randn({1, 1, 8, 8}, torch::kFloat64);
    auto f = torch::randn({1, 1, 8, 8}, torch::kFloat64);
    auto ncc = local_ncc_map(w, f, 3);
    auto s = torch::randn({1, 1, 8, 8}, torch::kFloat64);
    for (double gamma : {0.5, 1.0, 2.0}) {
      auto lo = torch::sigmoid(s).pow(gamma) * ncc;
      auto hi = torch::sigmoid(s + torch::rand_like(s)).pow(gamma) * ncc;
      CHECK((hi - lo).min().item<double>() >= 0.0);
    }
  }

  TEST_CASE("score receives no gradient; warped gradient matches finite differences") {
    torch::manual_seed(38);
    auto w = torch::randn({1, 1, 5, 5, 5}, torch::kFloat64);
    auto f = torch::randn({1, 1, 5, 5, 5}, torch::kFloat64);
    auto s = torch::randn({1, 1, 5, 5, 5}, torch::kFloat64);
    LossWeights lw;
    lw.ncc_window = 3;
    auto wl = w.clone().requires_grad_(true);
    auto sl = s.clone().requires_grad_(true);
    score_ncc_loss(wl, f, sl, lw).backward();
    CHECK(!sl.grad().defined());
    auto numeric = oracle::numeric_gradient(
        [&](const torch::Tensor& x) { return score_ncc_loss(x, f, s, lw).item<double>(); }, w);
    CHECK(oracle::relative_error(wl.grad(), numeric) < 1e-3);
  }

  TEST_CASE("total loss combination") {
    LossWeights lw;
    auto t = [](double v) { return torch::tensor(v, torch::kFloat64); };
    CHECK(total_loss(t(0), t(0), t(0), lw).item<double>() == 0.0);
    CHECK(total_loss(t(1), t(-0.5), t(0.1), lw).item<double>() == doctest::Approx(-7.0).epsilon(1e-12));
    CHECK_THROWS_AS(total_loss(t(std::nan("")), t(0), t(0), lw), DomainError);
    CHECK_THROWS_AS(total_loss(t(0), t(INFINITY), t(0), lw), DomainError);
  }

  TEST_CASE("weight defaults and validation") {
    LossWeights lw;
    CHECK(lw.lambda == 20.0);
    CHECK(lw.lambda_phi == 20.0);
    CHECK(lw.gamma == 1.0);
    CHECK(lw.ncc_window == 9);
    auto field_of = [](LossWeights w) {
      try {
        w.validate();
      } catch (const ConfigError& e) {
        return e.field();
      }
      return std::string("none");
    };
    LossWeights bad;
    bad.lambda = -1;
    CHECK(field_of(bad) == "lambda");
    bad = {};
    bad.gamma = -0.1;
    CHECK(field_of(bad) == "gamma");
    bad = {};
    bad.ncc_window = 4;
    CHECK(field_of(bad) == "ncc_window");
    bad = {};
    bad.lambda_phi = std::nan("");
    CHECK(field_of(bad) == "lambda_phi");
    CHECK(field_of(LossWeights{}) == "none");
  }
}
