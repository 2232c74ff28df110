#include "tosa/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tosa/ops.hpp"

namespace tosa {

SelectorParams SelectorParams::init(std::size_t heads, std::size_t hidden_channels,
                                    std::size_t kernel_width, Rng& rng) {
  if (heads == 0 || hidden_channels == 0) {
    throw std::invalid_argument("selector: heads and hidden channels must be positive");
  }
  if (kernel_width % 2 == 0) {
    throw std::invalid_argument("selector: kernel width must be odd");
  }
  SelectorParams p;
  p.heads = heads;
  p.hidden_channels = hidden_channels;
  p.kernel_width = kernel_width;
  const double std1 = 1.0 / std::sqrt(static_cast<double>(heads * kernel_width));
  const double std2 = 1.0 / std::sqrt(static_cast<double>(hidden_channels * kernel_width));
  p.conv1_kernels =
      rng.normal_tensor({hidden_channels, heads, kernel_width}, 0.0, std1).set_requires_grad(true);
  p.conv1_bias = Tensor::zeros({hidden_channels}).set_requires_grad(true);
  p.conv2_kernels =
      rng.normal_tensor({heads, hidden_channels, kernel_width}, 0.0, std2).set_requires_grad(true);
  p.conv2_bias = Tensor::zeros({heads}).set_requires_grad(true);
  return p;
}

void SelectorParams::collect_params(const std::string& prefix,
                                    std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".conv1_kernels", conv1_kernels);
  out.emplace_back(prefix + ".conv1_bias", conv1_bias);
  out.emplace_back(prefix + ".conv2_kernels", conv2_kernels);
  out.emplace_back(prefix + ".conv2_bias", conv2_bias);
}

std::vector<Tensor> SelectorParams::param_list() const {
  return {conv1_kernels, conv1_bias, conv2_kernels, conv2_bias};
}

void SelectionPlan::validate(const std::vector<std::size_t>& forced) const {
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const HeadPlan& plan = heads[h];
    if (plan.attended.size() != top_k) {
      throw std::logic_error("selection plan head " + std::to_string(h) +
                             ": attended count != K");
    }
    if (plan.attended.size() + plan.skipped.size() != num_tokens) {
      throw std::logic_error("selection plan head " + std::to_string(h) +
                             ": attended+skipped != token count");
    }
    std::vector<bool> seen(num_tokens, false);
    for (const auto* list : {&plan.attended, &plan.skipped}) {
      std::size_t prev = 0;
      bool first = true;
      for (std::size_t idx : *list) {
        if (idx >= num_tokens) throw std::logic_error("selection plan: index out of range");
        if (seen[idx]) throw std::logic_error("selection plan: index appears twice");
        if (!first && idx <= prev) throw std::logic_error("selection plan: index list not ascending");
        seen[idx] = true;
        prev = idx;
        first = false;
      }
    }
    for (std::size_t f : forced) {
      if (!std::binary_search(plan.attended.begin(), plan.attended.end(), f)) {
        throw std::logic_error("selection plan head " + std::to_string(h) +
                               ": forced index " + std::to_string(f) + " not attended");
      }
    }
  }
}

std::vector<Tensor> predict_attention(const std::vector<Tensor>& pre_softmax_maps,
                                      const SelectorParams& params) {
  if (pre_softmax_maps.size() != params.heads) {
    throw std::invalid_argument("predict_attention: expected " + std::to_string(params.heads) +
                                " head maps, got " + std::to_string(pre_softmax_maps.size()));
  }
  const std::size_t len = pre_softmax_maps.front().rows();
  for (const Tensor& m : pre_softmax_maps) {
    if (m.rank() != 2 || m.rows() != len || m.cols() != len) {
      throw std::invalid_argument("predict_attention: head maps must share one L×L shape");
    }
  }

  // One query row at a time: channel h of the [H×L] input is row q of
  // head h's map; the convs slide along the key axis.
  std::vector<std::vector<Tensor>> per_query_rows(len);
  for (std::size_t q = 0; q < len; ++q) {
    std::vector<Tensor> channels;
    channels.reserve(params.heads);
    for (std::size_t h = 0; h < params.heads; ++h) channels.push_back(row(pre_softmax_maps[h], q));
    Tensor stacked = concat_rows(channels);  // [H×L]
    Tensor hidden = relu(conv1d(stacked, params.conv1_kernels, params.conv1_bias));
    Tensor predicted = conv1d(hidden, params.conv2_kernels, params.conv2_bias);  // [H×L]
    Tensor log_rows = log_softmax(predicted, 1);
    per_query_rows[q].reserve(params.heads);
    for (std::size_t h = 0; h < params.heads; ++h) per_query_rows[q].push_back(row(log_rows, h));
  }

  std::vector<Tensor> log_maps;
  log_maps.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    std::vector<Tensor> rows_h;
    rows_h.reserve(len);
    for (std::size_t q = 0; q < len; ++q) rows_h.push_back(per_query_rows[q][h]);
    log_maps.push_back(concat_rows(rows_h));
  }
  return log_maps;
}

std::vector<Tensor> importance_scores(const std::vector<Tensor>& log_maps) {
  std::vector<Tensor> scores;
  scores.reserve(log_maps.size());
  for (const Tensor& lm : log_maps) {
    const std::size_t len = lm.rows();
    if (lm.cols() != len) throw std::invalid_argument("importance_scores: maps must be square");
    Tensor s = Tensor::zeros({len});
    for (std::size_t q = 0; q < len; ++q) {
      for (std::size_t j = 0; j < len; ++j) s.data()[j] += std::exp(lm.data()[q * len + j]);
    }
    scores.push_back(std::move(s));
  }
  return scores;
}

SelectionPlan select_tokens(const std::vector<Tensor>& scores, double ratio,
                            const std::vector<std::size_t>& forced) {
  if (!(ratio > 0.0) || ratio > 1.0) {
    throw std::invalid_argument("select_tokens: attention ratio must be in (0, 1], got " +
                                std::to_string(ratio));
  }
  if (scores.empty()) throw std::invalid_argument("select_tokens: no heads");
  const std::size_t len = scores.front().size();
  for (const Tensor& s : scores) {
    if (s.size() != len) throw std::invalid_argument("select_tokens: head score lengths differ");
  }
  std::vector<bool> is_forced(len, false);
  std::size_t forced_count = 0;
  for (std::size_t f : forced) {
    if (f >= len) throw std::out_of_range("select_tokens: forced index out of range");
    if (!is_forced[f]) {
      is_forced[f] = true;
      ++forced_count;
    }
  }

  // K = max(1, round-half-up(r*L), |forced|)
  const std::size_t rounded = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(len)));
  const std::size_t top_k = std::max({std::size_t{1}, rounded, forced_count});

  SelectionPlan plan;
  plan.ratio = ratio;
  plan.top_k = top_k;
  plan.num_tokens = len;

  for (const Tensor& s : scores) {
    std::vector<std::size_t> order(len);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = s.data()[a], sb = s.data()[b];
      if (sa != sb) return sa > sb;
      return a < b;
    });

    HeadPlan head;
    head.scores = s;
    std::vector<bool> attended(len, false);
    std::size_t taken = 0;
    for (std::size_t f = 0; f < len && taken < forced_count; ++f) {
      if (is_forced[f]) {
        attended[f] = true;
        ++taken;
      }
    }
    for (std::size_t pos = 0; pos < len && taken < top_k; ++pos) {
      const std::size_t idx = order[pos];
      if (!attended[idx]) {
        attended[idx] = true;
        ++taken;
      }
    }
    for (std::size_t i = 0; i < len; ++i) {
      (attended[i] ? head.attended : head.skipped).push_back(i);
    }
    plan.heads.push_back(std::move(head));
  }
  plan.validate(forced);
  return plan;
}

Tensor selector_loss(const std::vector<Tensor>& log_maps, const std::vector<Tensor>& true_maps) {
  if (log_maps.size() != true_maps.size() || log_maps.empty()) {
    throw std::invalid_argument("selector_loss: head count mismatch");
  }
  Tensor total = kl_divergence(log_maps[0], true_maps[0], 1);
  for (std::size_t h = 1; h < log_maps.size(); ++h) {
    total = add(total, kl_divergence(log_maps[h], true_maps[h], 1));
  }
  return total;
}

}  // namespace tosa
