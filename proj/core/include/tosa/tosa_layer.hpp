#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tosa/attention.hpp"
#include "tosa/selector.hpp"

namespace tosa {

/// What computation skipped tokens bypass.
///   kAttentionOnly:    only the per-head attention; W_O, F and the MLP
///                      still run over all L tokens.
///   kAttentionAndProj: W_O/F also run only over tokens attended in at
///                      least one head; tokens skipped by every head
///                      leave the attention sublayer unchanged.
///   kFullLayer:        tokens skipped by every head bypass the MLP
///                      sublayer too and pass through the layer as-is.
enum class SkipScope : std::uint8_t {
  kAttentionOnly = 0,
  kAttentionAndProj = 1,
  kFullLayer = 2,
};

const char* skip_scope_name(SkipScope scope);
SkipScope skip_scope_from_name(const std::string& name);

struct ToSALayerParams {
  BlockParams block;
  double ratio = 1.0;
  SkipScope scope = SkipScope::kAttentionOnly;
};

/// Rows of x listed by `indices` (which must be ascending), in order.
Tensor gather_tokens(const Tensor& x, const std::vector<std::size_t>& indices);

/// Order-restoring scatter: row t of the result comes from attended_out
/// if t is in attended_indices, else from skipped. The two index lists
/// must partition {0..L-1}.
Tensor scatter_merge(const Tensor& attended_out, const Tensor& skipped,
                     const std::vector<std::size_t>& attended_indices,
                     const std::vector<std::size_t>& skipped_indices);

/// The ToSA layer body under a fixed plan. Per head, Q/K/V are computed
/// only for that head's attended rows and attention runs on the K×K
/// subproblem; a skipped token's head slice carries the matching columns
/// of the raw input row (zero computation). Heads are re-merged at their
/// original positions before W_O/F/MLP run according to the scope.
/// Returned artifacts hold the attended-subset maps (K×K per head).
std::pair<Tensor, AttentionArtifacts> tosa_attention(const Tensor& x,
                                                     const ToSALayerParams& params,
                                                     const SelectionPlan& plan);

struct PairDiagnostics {
  AttentionArtifacts first_layer;         // B/A maps of the standard layer
  std::vector<Tensor> predicted_log_maps; // selector output, per head [L×L]
  SelectionPlan plan;
  AttentionArtifacts tosa_attended;       // K×K maps of the ToSA layer
  std::vector<Tensor> teacher_maps;       // next layer's true A maps, if requested
};

/// Standard layer, then selector, then ToSA layer — the two-layer unit
/// the method operates on. The selector runs without gradient recording;
/// top-K routing is not differentiable.
std::pair<Tensor, PairDiagnostics> tosa_pair_forward(
    const Tensor& x, const BlockParams& standard_params, const ToSALayerParams& tosa_params,
    const SelectorParams& selector_params, const std::vector<std::size_t>& forced = {},
    bool compute_teacher = false);

}  // namespace tosa
