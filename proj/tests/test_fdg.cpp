#include "testing.hpp"

#include "diffreg/errors.hpp"
#include "diffreg/fdg.hpp"
#include "diffreg/grid.hpp"
#include "oracles.hpp"

using namespace diffreg;

TEST_SUITE("fdg") {
  TEST_CASE("tiny attention matches the dense oracle") {
    auto q = torch::tensor({{0.2, -1.0, 0.5}, {1.5, 0.3, -0.7}}, torch::kFloat64);
    auto k = torch::tensor({{-0.4, 0.9, 0.1}, {0.0, -1.2, 2.0}}, torch::kFloat64);
    auto v = torch::tensor({{1.0, 2.0, -3.0}, {0.5, -0.5, 0.25}}, torch::kFloat64);
    auto fast = efficient_cross_attention(q.unsqueeze(0), k.unsqueeze(0), v.unsqueeze(0))[0];
    CHECK((fast - oracle::dense_attention(q, k, v)).abs().max().item<double>() < 1e-5);
  }

  TEST_CASE("random attention matches the dense oracle in single precision") {
    torch::manual_seed(21);
    auto q = torch::randn({2, 4, 30});
    auto k = torch::randn({2, 4, 30});
    auto v = torch::randn({2, 6, 30});
    auto fast = efficient_cross_attention(q, k, v);
    for (int64_t b = 0; b < 2; ++b) {
      auto dense = oracle::dense_attention(q[b], k[b], v[b]);
      CHECK((fast[b].to(torch::kFloat64) - dense).abs().max().item<double>() < 1e-5);
    }
  }

  TEST_CASE("attention rejects mismatched operands") {
    CHECK_THROWS_AS(efficient_cross_attention(torch::zeros({1, 2, 5}), torch::zeros({1, 3, 5}), torch::zeros({1, 2, 5})), ShapeError);
    CHECK_THROWS_AS(efficient_cross_attention(torch::zeros({1, 2, 5}), torch::zeros({1, 2, 5}), torch::zeros({1, 2, 4})), ShapeError);
  }

  TEST_CASE("level head emits a D-channel field at the level extent, zero at init") {
    torch::manual_seed(22);
    LevelFieldHead head(2, 8, 16, 4);
    auto phi = head->forward(torch::randn({1, 8, 8, 12}), torch::randn({1, 16, 8, 12}));
    CHECK(phi.sizes() == torch::IntArrayRef({1, 2, 8, 12}));
    CHECK(phi.abs().max().item<double>() == 0.0);
    LevelFieldHead head3(3, 8, 8, 4);
    CHECK(head3->forward(torch::randn({1, 8, 4, 4, 4}), torch::randn({1, 8, 4, 4, 4})).size(1) == 3);
  }

  TEST_CASE("zero diffusion features reduce the head to Conv(F_R)") {
    torch::manual_seed(23);
    LevelFieldHead head(2, 8, 8, 4);
    torch::NoGradGuard no_grad;
    head->out->weight.normal_();
    head->out->bias.normal_();
    auto reg = torch::randn({1, 8, 6, 6});
    auto zero = torch::zeros({1, 8, 6, 6});
    CHECK(torch::allclose(head->attend(reg, zero), reg, 0.0, 0.0));
    CHECK(torch::allclose(head->forward(reg, zero), head->out(reg), 0.0, 0.0));
  }

  TEST_CASE("attention term is permutation-equivariant over voxels") {
    torch::manual_seed(24);
    LevelFieldHead head(2, 8, 8, 4);
    auto reg = torch::randn({1, 8, 24, 1}, torch::kFloat64);
    auto diff = torch::randn({1, 8, 24, 1}, torch::kFloat64);
    head->to(torch::kFloat64);
    auto perm = torch::randperm(24);
    auto permute = [&](const torch::Tensor& t) { return t.index_select(2, perm); };
    auto base = head->attend(reg, diff);
    auto permuted = head->attend(permute(reg), permute(diff));
    CHECK((permute(base) - permuted).abs().max().item<double>() < 1e-12);
  }

  TEST_CASE("gradients reach both attention operands") {
    torch::manual_seed(25);
    LevelFieldHead head(2, 8, 8, 4);
    auto reg = torch::randn({1, 8, 6, 6}).requires_grad_(true);
    auto diff = torch::randn({1, 8, 6, 6}).requires_grad_(true);
    head->attend(reg, diff).pow(2).sum().backward();
    CHECK(reg.grad().norm().item<double>() > 0.0);
    CHECK(diff.grad().norm().item<double>() > 0.0);
  }

  TEST_CASE("merge of one full-resolution field is the identity") {
    torch::manual_seed(26);
    auto f = torch::randn({1, 2, 8, 8});
    CHECK(torch::equal(merge_fields({f}, {8, 8}), f));
    CHECK((merge_fields({f, f, f}, {8, 8}) - f).abs().max().item<double>() < 1e-6);
  }

  TEST_CASE("half-resolution constant doubles and warps like its full-resolution equivalent") {
    auto half = torch::zeros({1, 2, 8, 8}, torch::kFloat64);
    half.select(1, 0).fill_(0.75);
    half.select(1, 1).fill_(-0.5);
    auto merged = merge_fields({half}, {16, 16});
    auto full = torch::zeros({1, 2, 16, 16}, torch::kFloat64);
    full.select(1, 0).fill_(1.5);
    full.select(1, 1).fill_(-1.0);
    CHECK((merged - full).abs().max().item<double>() < 1e-12);
    torch::manual_seed(27);
    auto img = torch::randn({1, 1, 16, 16}, torch::kFloat64);
    CHECK((grid::warp(img, merged) - grid::warp(img, full)).abs().max().item<double>() < 1e-12);
  }

  TEST_CASE("merge scales each axis by its own factor") {
    auto f = torch::ones({1, 3, 2, 4, 8}, torch::kFloat64);
    auto merged = merge_fields({f}, {8, 8, 8});
    CHECK((merged[0][0] - 4.0).abs().max().item<double>() < 1e-12);
    CHECK((merged[0][1] - 2.0).abs().max().item<double>() < 1e-12);
    CHECK((merged[0][2] - 1.0).abs().max().item<double>() < 1e-12);
  }

  TEST_CASE("merge is linear") {
    torch::manual_seed(28);
    std::vector<torch::Tensor> fields{torch::randn({1, 2, 4, 4}, torch::kFloat64),
                                      torch::randn({1, 2, 8, 8}, torch::kFloat64),
                                      torch::randn({1, 2, 16, 16}, torch::kFloat64)};
    std::vector<torch::Tensor> scaled;
    for (const auto& f : fields) scaled.push_back(-2.5 * f);
    auto lhs = merge_fields(scaled, {16, 16});
    auto rhs = -2.5 * merge_fields(fields, {16, 16});
    CHECK((lhs - rhs).abs().max().item<double>() < 1e-12);
  }

  TEST_CASE("merge rejects empty and non-pyramid inputs") {
    CHECK_THROWS_AS(merge_fields({}, {8, 8}), DomainError);
    CHECK_THROWS_AS(merge_fields({torch::zeros({1, 2, 3, 8})}, {8, 8}), ShapeError);
    CHECK_THROWS_AS(merge_fields({torch::zeros({1, 2, 8, 8})}, {24, 24}), ShapeError);
    CHECK_THROWS_AS(merge_fields({torch::zeros({1, 3, 8, 8})}, {8, 8}), ShapeError);
  }
}
