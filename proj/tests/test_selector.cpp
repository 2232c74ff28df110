#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "tosa/gradcheck.hpp"
#include "tosa/ops.hpp"
#include "tosa/rng.hpp"
#include "tosa/selector.hpp"

using namespace tosa;

namespace {

std::vector<Tensor> random_maps(Rng& rng, std::size_t heads, std::size_t len, double spread) {
  std::vector<Tensor> maps;
  for (std::size_t h = 0; h < heads; ++h) maps.push_back(rng.normal_tensor({len, len}, 0.0, spread));
  return maps;
}

// brute-force oracle: sort (score desc, index asc), take indices
std::vector<std::size_t> topk_by_sort(const Tensor& scores, std::size_t k,
                                      const std::vector<std::size_t>& forced) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.data()[a] != scores.data()[b]) return scores.data()[a] > scores.data()[b];
    return a < b;
  });
  std::vector<std::size_t> chosen(forced);
  for (std::size_t idx : order) {
    if (chosen.size() >= k) break;
    if (std::find(chosen.begin(), chosen.end(), idx) == chosen.end()) chosen.push_back(idx);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace

TEST_CASE("predict_attention output is row-normalized in log space") {
  Rng rng(1);
  SelectorParams sel = SelectorParams::init(3, 8, 3, rng);
  auto maps = random_maps(rng, 3, 9, 2.0);
  auto log_maps = predict_attention(maps, sel);
  REQUIRE(log_maps.size() == 3);
  for (const Tensor& lm : log_maps) {
    REQUIRE(lm.rows() == 9);
    for (std::size_t q = 0; q < 9; ++q) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 9; ++j) sum += std::exp(lm.at(q, j));
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("zero selector weights predict the uniform map") {
  Rng rng(2);
  SelectorParams sel = SelectorParams::init(2, 4, 3, rng);
  std::fill(sel.conv1_kernels.data(), sel.conv1_kernels.data() + sel.conv1_kernels.size(), 0.0);
  std::fill(sel.conv1_bias.data(), sel.conv1_bias.data() + sel.conv1_bias.size(), 0.0);
  std::fill(sel.conv2_kernels.data(), sel.conv2_kernels.data() + sel.conv2_kernels.size(), 0.0);
  std::fill(sel.conv2_bias.data(), sel.conv2_bias.data() + sel.conv2_bias.size(), 0.0);
  auto maps = random_maps(rng, 2, 7, 1.0);
  auto log_maps = predict_attention(maps, sel);
  const double expect = -std::log(7.0);
  for (const Tensor& lm : log_maps) {
    for (std::size_t i = 0; i < lm.size(); ++i) CHECK(lm.data()[i] == doctest::Approx(expect));
  }
}

TEST_CASE("predict_attention rejects inconsistent shapes") {
  Rng rng(3);
  SelectorParams sel = SelectorParams::init(2, 4, 3, rng);
  std::vector<Tensor> bad = {rng.normal_tensor({5, 5}, 0, 1), rng.normal_tensor({4, 4}, 0, 1)};
  CHECK_THROWS_AS(predict_attention(bad, sel), std::invalid_argument);
  std::vector<Tensor> wrong_count = {rng.normal_tensor({5, 5}, 0, 1)};
  CHECK_THROWS_AS(predict_attention(wrong_count, sel), std::invalid_argument);
}

TEST_CASE("selector gradients pass finite differences") {
  Rng rng(4);
  SelectorParams sel = SelectorParams::init(2, 4, 3, rng);
  auto maps = random_maps(rng, 2, 7, 1.0);

  // row-stochastic teacher
  std::vector<Tensor> teacher;
  for (std::size_t h = 0; h < 2; ++h) teacher.push_back(softmax(rng.normal_tensor({7, 7}, 0, 1), 1));

  auto rep = check_gradients(
      [&]() { return selector_loss(predict_attention(maps, sel), teacher); },
      sel.param_list(), 1e-5);
  CHECK_MESSAGE(rep.max_rel_dev < 1e-5, rep.summary());
}

TEST_CASE("importance scores are probability column sums") {
  // uniform maps give every token a score of exactly 1
  const std::size_t len = 6;
  Tensor uniform = Tensor::full({len, len}, -std::log(static_cast<double>(len)));
  auto scores = importance_scores({uniform, uniform});
  for (const Tensor& s : scores) {
    for (std::size_t j = 0; j < len; ++j) CHECK(s.data()[j] == doctest::Approx(1.0));
  }

  // all rows putting mass 1 on column 3: scores [0,0,0,L,0,...]
  Tensor peaked = Tensor::full({len, len}, -745.0);  // exp(-745) == 5e-324, effectively 0
  for (std::size_t q = 0; q < len; ++q) peaked.data()[q * len + 3] = 0.0;
  auto peak_scores = importance_scores({peaked});
  for (std::size_t j = 0; j < len; ++j) {
    CHECK(peak_scores[0].data()[j] ==
          doctest::Approx(j == 3 ? static_cast<double>(len) : 0.0).epsilon(1e-12));
  }

  // random map against the direct oracle; total mass L
  Rng rng(5);
  Tensor lm = log_softmax(rng.normal_tensor({len, len}, 0.0, 2.0), 1);
  auto s = importance_scores({lm});
  double total = 0.0;
  for (std::size_t j = 0; j < len; ++j) {
    double expect = 0.0;
    for (std::size_t q = 0; q < len; ++q) expect += std::exp(lm.at(q, j));
    CHECK(s[0].data()[j] == doctest::Approx(expect).epsilon(1e-9));
    total += s[0].data()[j];
  }
  CHECK(std::abs(total - static_cast<double>(len)) < 1e-6);
}

TEST_CASE("select_tokens basics, ties, and the forced class token") {
  // r=1.0 keeps everything
  Tensor s = Tensor::from_data({4}, {0.1, 0.5, 0.2, 0.2});
  SelectionPlan all = select_tokens({s, s}, 1.0);
  for (const HeadPlan& head : all.heads) {
    CHECK(head.attended.size() == 4);
    CHECK(head.skipped.empty());
  }

  // spec tie case: K=2, tie between index 2 and 3 resolves to 2
  SelectionPlan tie = select_tokens({s}, 0.5);
  CHECK(tie.top_k == 2);
  CHECK(tie.heads[0].attended == std::vector<std::size_t>{1, 2});
  CHECK(tie.heads[0].skipped == std::vector<std::size_t>{0, 3});

  // L=197, r=0.8, forced {0}: K = 158 and 0 is attended
  Rng rng(6);
  Tensor big = rng.uniform_tensor({197}, 0.0, 1.0);
  SelectionPlan plan = select_tokens({big}, 0.8, {0});
  CHECK(plan.top_k == 158);
  CHECK(std::binary_search(plan.heads[0].attended.begin(), plan.heads[0].attended.end(), 0u));
  CHECK(plan.heads[0].attended == topk_by_sort(big, 158, {0}));

  CHECK_THROWS_AS(select_tokens({s}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(select_tokens({s}, 1.2), std::invalid_argument);
  CHECK_THROWS_AS(select_tokens({s}, 0.5, {9}), std::out_of_range);
}

TEST_CASE("selection is invariant to positive scaling of scores") {
  Rng rng(7);
  for (int iter = 0; iter < 20; ++iter) {
    Tensor s = rng.uniform_tensor({13}, 0.0, 1.0);
    Tensor scaled = Tensor::zeros({13});
    const double c = rng.uniform(0.1, 10.0);
    for (std::size_t i = 0; i < 13; ++i) scaled.data()[i] = c * s.data()[i];
    SelectionPlan a = select_tokens({s}, 0.6, {0});
    SelectionPlan b = select_tokens({scaled}, 0.6, {0});
    CHECK(a.heads[0].attended == b.heads[0].attended);
  }
}

TEST_CASE("plans partition the token set per head") {
  Rng rng(8);
  for (int iter = 0; iter < 20; ++iter) {
    const std::size_t len = 5 + rng.index(30);
    std::vector<Tensor> scores;
    for (int h = 0; h < 3; ++h) scores.push_back(rng.uniform_tensor({len}, 0.0, 1.0));
    const double r = rng.uniform(0.05, 1.0);
    SelectionPlan plan = select_tokens(scores, r, {0});
    CHECK_NOTHROW(plan.validate({0}));
    CHECK(plan.top_k == std::max<std::size_t>(
                            {1, static_cast<std::size_t>(std::llround(r * static_cast<double>(len))),
                             1}));
    for (const HeadPlan& head : plan.heads) {
      std::vector<bool> seen(len, false);
      for (std::size_t idx : head.attended) seen[idx] = true;
      for (std::size_t idx : head.skipped) {
        CHECK(!seen[idx]);
        seen[idx] = true;
      }
      CHECK(std::all_of(seen.begin(), seen.end(), [](bool v) { return v; }));
    }
  }
}

TEST_CASE("selector_loss matches the hand-summed oracle") {
  Rng rng(9);
  std::vector<Tensor> log_maps, teachers;
  for (int h = 0; h < 2; ++h) {
    log_maps.push_back(log_softmax(rng.normal_tensor({3, 3}, 0.0, 1.0), 1));
    teachers.push_back(softmax(rng.normal_tensor({3, 3}, 0.0, 1.0), 1));
  }

  // identical distributions: zero loss
  std::vector<Tensor> self_teacher;
  for (const Tensor& lm : log_maps) {
    Tensor p = Tensor::zeros({3, 3});
    for (std::size_t i = 0; i < 9; ++i) p.data()[i] = std::exp(lm.data()[i]);
    self_teacher.push_back(p);
  }
  CHECK(selector_loss(log_maps, self_teacher).item() == doctest::Approx(0.0).epsilon(1e-12));

  // nonnegative and equal to the direct sum
  double expect = 0.0;
  for (int h = 0; h < 2; ++h) {
    double head_total = 0.0;
    for (std::size_t q = 0; q < 3; ++q) {
      for (std::size_t j = 0; j < 3; ++j) {
        const double p = teachers[h].at(q, j);
        head_total += p * (std::log(p) - log_maps[h].at(q, j));
      }
    }
    expect += head_total / 3.0;  // per-head mean over query rows
  }
  const double got = selector_loss(log_maps, teachers).item();
  CHECK(got == doctest::Approx(expect).epsilon(1e-9));
  CHECK(got >= 0.0);

  // unnormalized teacher rejected
  std::vector<Tensor> bad = teachers;
  bad[0].data()[0] += 0.5;
  CHECK_THROWS_AS(selector_loss(log_maps, bad), std::invalid_argument);
}
