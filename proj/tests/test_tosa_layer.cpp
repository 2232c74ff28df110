#include <algorithm>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "tosa/gradcheck.hpp"
#include "tosa/ops.hpp"
#include "tosa/rng.hpp"
#include "tosa/tape.hpp"
#include "tosa/tosa_layer.hpp"

using namespace tosa;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

SelectionPlan manual_plan(std::size_t tokens, double ratio,
                          const std::vector<std::vector<std::size_t>>& attended_per_head) {
  SelectionPlan plan;
  plan.num_tokens = tokens;
  plan.ratio = ratio;
  plan.top_k = attended_per_head.front().size();
  for (const auto& attended : attended_per_head) {
    HeadPlan head;
    head.attended = attended;
    for (std::size_t i = 0; i < tokens; ++i) {
      if (!std::binary_search(attended.begin(), attended.end(), i)) head.skipped.push_back(i);
    }
    head.scores = Tensor::zeros({tokens});
    plan.heads.push_back(std::move(head));
  }
  return plan;
}

SelectionPlan full_plan(std::size_t tokens, std::size_t heads) {
  std::vector<std::size_t> all(tokens);
  for (std::size_t i = 0; i < tokens; ++i) all[i] = i;
  return manual_plan(tokens, 1.0, std::vector<std::vector<std::size_t>>(heads, all));
}

std::vector<Tensor> layer_leaves(const ToSALayerParams& p) {
  std::vector<std::pair<std::string, Tensor>> named;
  p.block.collect_params("layer", named);
  std::vector<Tensor> leaves;
  for (auto& [name, t] : named) leaves.push_back(t);
  return leaves;
}

}  // namespace

TEST_CASE("gather_tokens requires ascending indices") {
  Rng rng(1);
  Tensor x = rng.normal_tensor({4, 3}, 0.0, 1.0);
  Tensor all = gather_tokens(x, {0, 1, 2, 3});
  CHECK(bit_equal(all, x));
  CHECK_THROWS_AS(gather_tokens(x, {2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(gather_tokens(x, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(gather_tokens(x, {5}), std::out_of_range);

  Tensor some = gather_tokens(x, {1, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(some.at(0, c) == x.at(1, c));
    CHECK(some.at(1, c) == x.at(3, c));
  }
}

TEST_CASE("scatter_merge restores original token order") {
  Rng rng(2);
  Tensor attended = rng.normal_tensor({1, 2}, 0.0, 1.0);
  Tensor skipped = rng.normal_tensor({2, 2}, 0.0, 1.0);
  Tensor merged = scatter_merge(attended, skipped, {1}, {0, 2});
  CHECK(merged.at(0, 0) == skipped.at(0, 0));
  CHECK(merged.at(1, 0) == attended.at(0, 0));
  CHECK(merged.at(2, 0) == skipped.at(1, 0));

  // empty skip set copies through
  Tensor only = scatter_merge(attended, Tensor(), {0}, {});
  CHECK(bit_equal(only, attended));

  CHECK_THROWS_AS(scatter_merge(attended, skipped, {1}, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(scatter_merge(attended, skipped, {3}, {0, 2}), std::invalid_argument);
}

TEST_CASE("gather then scatter is the identity for any partition") {
  Rng rng(3);
  for (int iter = 0; iter < 25; ++iter) {
    const std::size_t tokens = 3 + rng.index(20);
    Tensor x = rng.normal_tensor({tokens, 4}, 0.0, 1.0);
    std::vector<std::size_t> attended, skipped;
    for (std::size_t i = 0; i < tokens; ++i) {
      (rng.uniform() < 0.5 ? attended : skipped).push_back(i);
    }
    if (attended.empty()) attended.push_back(skipped.back()), skipped.pop_back();
    Tensor round;
    if (skipped.empty()) {
      round = scatter_merge(gather_tokens(x, attended), Tensor(), attended, {});
    } else {
      round = scatter_merge(gather_tokens(x, attended), gather_tokens(x, skipped), attended,
                            skipped);
    }
    CHECK(bit_equal(round, x));
  }
}

TEST_CASE("full selection makes the layer bit-identical to the standard block") {
  Rng rng(4);
  for (SkipScope scope : {SkipScope::kAttentionOnly, SkipScope::kAttentionAndProj,
                          SkipScope::kFullLayer}) {
    Rng init(99);
    ToSALayerParams params{BlockParams::init(8, 2, init), 1.0, scope};
    Tensor x = rng.normal_tensor({6, 8}, 0.0, 1.0);
    auto [standard, std_artifacts] = block_forward(x, params.block);
    auto [selective, artifacts] = tosa_attention(x, params, full_plan(6, 2));
    CHECK(bit_equal(standard, selective));
    for (std::size_t h = 0; h < 2; ++h) {
      CHECK(bit_equal(std_artifacts.pre_softmax[h], artifacts.pre_softmax[h]));
      CHECK(bit_equal(std_artifacts.softmaxed[h], artifacts.softmaxed[h]));
    }
  }
}

TEST_CASE("full_layer scope passes fully skipped tokens through untouched") {
  Rng rng(5);
  ToSALayerParams params{BlockParams::init(8, 2, rng), 0.5, SkipScope::kFullLayer};
  Tensor x = rng.normal_tensor({6, 8}, 0.0, 1.0);
  // token 4 skipped by both heads, token 2 skipped by head 0 only
  SelectionPlan plan = manual_plan(6, 0.5, {{0, 1, 3, 5}, {0, 2, 3, 5}});
  auto [y, artifacts] = tosa_attention(x, params, plan);
  REQUIRE(y.rows() == 6);
  for (std::size_t c = 0; c < 8; ++c) CHECK(y.at(4, c) == x.at(4, c));
  // a partially attended token does change
  bool changed = false;
  for (std::size_t c = 0; c < 8; ++c) changed = changed || y.at(2, c) != x.at(2, c);
  CHECK(changed);
}

TEST_CASE("token count is preserved for every ratio and scope") {
  Rng rng(6);
  BlockParams block = BlockParams::init(8, 2, rng);
  Tensor x = rng.normal_tensor({9, 8}, 0.0, 1.0);
  for (SkipScope scope : {SkipScope::kAttentionOnly, SkipScope::kAttentionAndProj,
                          SkipScope::kFullLayer}) {
    for (double r : {0.3, 0.5, 0.8, 1.0}) {
      ToSALayerParams params{block, r, scope};
      std::vector<Tensor> scores;
      for (int h = 0; h < 2; ++h) scores.push_back(rng.uniform_tensor({9}, 0.0, 1.0));
      SelectionPlan plan = select_tokens(scores, r, {0});
      auto [y, artifacts] = tosa_attention(x, params, plan);
      CHECK(y.rows() == 9);
      CHECK(y.cols() == 8);
      for (const Tensor& map : artifacts.softmaxed) {
        CHECK(map.rows() == plan.top_k);
      }
    }
  }
}

TEST_CASE("tosa layer is deterministic under a fixed plan") {
  Rng rng(7);
  ToSALayerParams params{BlockParams::init(8, 2, rng), 0.5, SkipScope::kAttentionAndProj};
  Tensor x = rng.normal_tensor({7, 8}, 0.0, 1.0);
  SelectionPlan plan = manual_plan(7, 0.5, {{0, 2, 4, 6}, {0, 1, 5, 6}});
  auto [y1, a1] = tosa_attention(x, params, plan);
  auto [y2, a2] = tosa_attention(x, params, plan);
  CHECK(bit_equal(y1, y2));
}

TEST_CASE("tosa layer gradients pass finite differences under every scope") {
  for (SkipScope scope : {SkipScope::kAttentionOnly, SkipScope::kAttentionAndProj,
                          SkipScope::kFullLayer}) {
    Rng rng(8);
    ToSALayerParams params{BlockParams::init(8, 2, rng), 0.5, scope};
    Tensor x = rng.normal_tensor({6, 8}, 0.0, 1.0);
    Tensor weights = rng.normal_tensor({6, 8}, 0.0, 1.0);
    SelectionPlan plan = manual_plan(6, 0.5, {{0, 2, 5}, {0, 3, 4}});
    std::vector<Tensor> leaves = layer_leaves(params);
    leaves.push_back(x);
    auto rep = check_gradients(
        [&]() {
          auto [y, artifacts] = tosa_attention(x, params, plan);
          return mean_all(mul(y, weights));
        },
        leaves, 1e-5);
    CHECK_MESSAGE(rep.max_rel_dev < 1e-5, rep.summary());
  }
}

TEST_CASE("pair forward with r=1 equals two standard blocks bit for bit") {
  Rng rng(9);
  BlockParams first = BlockParams::init(8, 2, rng);
  ToSALayerParams second{BlockParams::init(8, 2, rng), 1.0, SkipScope::kAttentionOnly};
  SelectorParams selector = SelectorParams::init(2, 4, 3, rng);
  Tensor x = rng.normal_tensor({6, 8}, 0.0, 1.0);

  auto [y_pair, diag] = tosa_pair_forward(x, first, second, selector);
  auto [mid, first_artifacts] = block_forward(x, first);
  auto [y_std, second_artifacts] = block_forward(mid, second.block);
  CHECK(bit_equal(y_pair, y_std));
  CHECK_NOTHROW(diag.plan.validate());
  CHECK(diag.plan.top_k == 6);
}

TEST_CASE("pair forward diagnostics carry plan, predictions, and teacher maps") {
  Rng rng(10);
  BlockParams first = BlockParams::init(8, 2, rng);
  ToSALayerParams second{BlockParams::init(8, 2, rng), 0.6, SkipScope::kAttentionOnly};
  SelectorParams selector = SelectorParams::init(2, 4, 3, rng);
  Tensor x = rng.normal_tensor({7, 8}, 0.0, 1.0);

  auto [y, diag] = tosa_pair_forward(x, first, second, selector, {0}, /*compute_teacher=*/true);
  CHECK(y.rows() == 7);
  CHECK_NOTHROW(diag.plan.validate({0}));
  CHECK(diag.plan.top_k == 4);  // round(0.6 * 7)
  REQUIRE(diag.predicted_log_maps.size() == 2);
  REQUIRE(diag.teacher_maps.size() == 2);
  for (const Tensor& teacher : diag.teacher_maps) {
    REQUIRE(teacher.rows() == 7);
    for (std::size_t q = 0; q < 7; ++q) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 7; ++j) sum += teacher.at(q, j);
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
  // predictions are valid row distributions
  for (const Tensor& lm : diag.predicted_log_maps) {
    for (std::size_t q = 0; q < 7; ++q) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 7; ++j) sum += std::exp(lm.at(q, j));
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}
