#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tosa/rng.hpp"
#include "tosa/tensor.hpp"

namespace tosa {

/// Token selector: a two-layer 1D conv net with a ReLU in between that
/// maps the previous layer's pre-softmax maps (H input channels) to
/// log-normalized predictions of the next layer's maps. Convolutions
/// run along the key axis, one query row at a time, so the net handles
/// any token count L.
struct SelectorParams {
  std::size_t heads = 0;
  std::size_t hidden_channels = 0;
  std::size_t kernel_width = 0;
  Tensor conv1_kernels;  // [C × H × k]
  Tensor conv1_bias;     // [C]
  Tensor conv2_kernels;  // [H × C × k]
  Tensor conv2_bias;     // [H]

  static SelectorParams init(std::size_t heads, std::size_t hidden_channels,
                             std::size_t kernel_width, Rng& rng);
  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>& out) const;
  std::vector<Tensor> param_list() const;
};

/// Attended/skipped split for one ToSA layer. Index lists are ascending
/// and partition {0..L-1} per head; every head keeps exactly K tokens.
struct HeadPlan {
  std::vector<std::size_t> attended;
  std::vector<std::size_t> skipped;
  Tensor scores;  // [L]
};

struct SelectionPlan {
  std::vector<HeadPlan> heads;
  double ratio = 1.0;
  std::size_t top_k = 0;
  std::size_t num_tokens = 0;

  /// Throws std::logic_error if any head violates the partition or
  /// cardinality invariants.
  void validate(const std::vector<std::size_t>& forced = {}) const;
};

/// Predicted log attention maps for the next layer, one [L×L] tensor
/// per head. Input: this layer's pre-softmax maps B, one per head.
std::vector<Tensor> predict_attention(const std::vector<Tensor>& pre_softmax_maps,
                                      const SelectorParams& params);

/// Per-token importance: column sums of exp(log map), per head. Not a
/// taped op; selection is hard top-K and takes no gradients.
std::vector<Tensor> importance_scores(const std::vector<Tensor>& log_maps);

/// Top-K per head with K = max(1, round(r*L), |forced|); forced indices
/// are always attended, ties broken toward the lower index.
SelectionPlan select_tokens(const std::vector<Tensor>& scores, double ratio,
                            const std::vector<std::size_t>& forced = {});

/// Distillation loss: sum over heads of KL(A_true || exp(log_map)),
/// each head averaged over query rows.
Tensor selector_loss(const std::vector<Tensor>& log_maps, const std::vector<Tensor>& true_maps);

}  // namespace tosa
