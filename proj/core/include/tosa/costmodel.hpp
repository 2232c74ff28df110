#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tosa/model.hpp"

namespace tosa {

/// Analytic FLOP accounting. Conventions (explicit so the numbers are
/// testable):
///   - a multiply-add counts as 2 flops; exp/log/div/sqrt/compare count 1
///   - `macs` counts multiply-accumulates of the matrix/conv work only;
///     this matches the GFLOPs convention vision papers report, and is
///     what gflops_paper_convention exposes
///   - token-selective layers replace L with K = max(1, round(r*L)) in
///     the components their scope covers: qkv and the attention matmuls
///     always, the output projections under attention_and_proj and
///     full_layer, the MLP under full_layer (the attended-union size is
///     approximated by K)
enum class LayerKind { kStandard, kToSA };

struct LayerCost {
  std::size_t layer_index = 0;
  LayerKind kind = LayerKind::kStandard;
  // flops per component
  std::uint64_t qkv_proj = 0;
  std::uint64_t attn_matmuls = 0;
  std::uint64_t out_proj = 0;
  std::uint64_t mlp = 0;
  std::uint64_t selector = 0;
  std::uint64_t norms = 0;
  std::uint64_t macs = 0;
  std::uint64_t activation_bytes = 0;

  std::uint64_t total_flops() const {
    return qkv_proj + attn_matmuls + out_proj + mlp + selector + norms;
  }
};

struct CostModelOptions {
  bool include_selector = true;
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::uint64_t embed_flops = 0, embed_macs = 0;
  std::uint64_t head_flops = 0, head_macs = 0;
  std::uint64_t total_flops = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t baseline_total_flops = 0;
  std::uint64_t baseline_total_macs = 0;
  double reduction_fraction = 0.0;        // 1 - total_flops/baseline_total_flops
  double gflops_paper_convention = 0.0;   // total_macs / 1e9
  std::uint64_t peak_activation_bytes = 0;
  bool include_selector = true;
  std::string skip_scope;
  double ratio = 1.0;

  /// Stable-key JSON (insertion-ordered).
  std::string to_json(int indent = 2) const;
};

/// K as the routing layer computes it.
std::size_t selected_token_count(double ratio, std::size_t tokens);

LayerCost layer_flops(std::size_t tokens, std::size_t dim, std::size_t heads, LayerKind kind,
                      double ratio, SkipScope scope, std::size_t selector_channels,
                      std::size_t selector_kernel, bool include_selector = true);

CostReport model_cost(const ModelConfig& config, const CostModelOptions& options = {});

}  // namespace tosa
