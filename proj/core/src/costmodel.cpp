#include "tosa/costmodel.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace tosa {

namespace {
using u64 = std::uint64_t;

u64 layer_norm_flops(u64 rows, u64 dim) {
  // mean, centered square, normalize, affine: ~7 per element, plus a
  // sqrt and a divide per row
  return rows * (7 * dim + 2);
}

u64 log2_ceil(u64 n) {
  u64 bits = 0;
  while ((u64{1} << bits) < n) ++bits;
  return bits;
}
}  // namespace

std::size_t selected_token_count(double ratio, std::size_t tokens) {
  const auto rounded = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(tokens)));
  return std::max<std::size_t>(1, rounded);
}

LayerCost layer_flops(std::size_t tokens, std::size_t dim, std::size_t heads, LayerKind kind,
                      double ratio, SkipScope scope, std::size_t selector_channels,
                      std::size_t selector_kernel, bool include_selector) {
  const u64 L = tokens, D = dim, H = heads;
  const bool selective = kind == LayerKind::kToSA;
  const u64 K = selective ? selected_token_count(ratio, tokens) : L;
  // rows used by the output projections / MLP under the scope
  const u64 L_proj = (selective && scope != SkipScope::kAttentionOnly) ? K : L;
  const u64 L_mlp = (selective && scope == SkipScope::kFullLayer) ? K : L;

  LayerCost c;
  c.kind = kind;

  // Q/K/V are only computed for attended rows: 3 * 2 * K * D^2
  c.qkv_proj = 3 * 2 * K * D * D;
  // QK^T and A·V (2 * 2 * K^2 * D) plus row softmax (5 per element):
  // scales exactly as (K/L)^2
  c.attn_matmuls = 2 * 2 * K * K * D + 5 * H * K * K;
  // W_O then F (2 * 2 * rows * D^2) plus F's bias add
  c.out_proj = 2 * 2 * L_proj * D * D + L_proj * D;
  // D -> 4D -> D with GELU (6 per hidden element) and biases
  c.mlp = 2 * 8 * L_mlp * D * D + L_mlp * 4 * D + L_mlp * D + 6 * L_mlp * 4 * D;
  // norm1 runs over all rows, norm2 over the MLP's rows; two residual adds
  c.norms = layer_norm_flops(L, D) + layer_norm_flops(L_mlp, D) + 2 * L * D;

  c.macs = 3 * K * D * D           // qkv
           + 2 * K * K * D         // attention matmuls
           + 2 * L_proj * D * D    // W_O + F
           + 8 * L_mlp * D * D;    // mlp

  if (selective && include_selector) {
    const u64 C = selector_channels, kw = selector_kernel;
    const u64 conv_macs = C * H * kw * L * L + H * C * kw * L * L;
    c.selector = 2 * conv_macs          // two convs over H·L rows of length L
                 + C * L * L            // conv1 bias
                 + H * L * L            // conv2 bias
                 + C * L * L            // relu
                 + 6 * H * L * L        // log-softmax
                 + 2 * H * L * L        // importance (exp + column add)
                 + H * L * log2_ceil(L);  // top-K selection
    c.macs += conv_macs;
  }

  const u64 dh = D / H;
  c.activation_bytes = 8 * (2 * H * K * K     // B and A maps
                            + 3 * K * dh * H  // Q, K, V
                            + L * D           // merged heads
                            + 4 * D * L_mlp   // MLP hidden
                            + 2 * L * D);     // residual streams
  return c;
}

CostReport model_cost(const ModelConfig& config, const CostModelOptions& options) {
  config.validate();
  CostReport report;
  report.include_selector = options.include_selector;
  report.skip_scope = skip_scope_name(config.scope);
  report.ratio = config.ratio;

  const std::size_t L = config.num_tokens();
  const std::size_t D = config.embed_dim;

  // patch projection + class/positional adds
  report.embed_macs = static_cast<u64>(config.num_patches()) * config.patch_dim() * D;
  report.embed_flops = 2 * report.embed_macs + static_cast<u64>(config.num_patches()) * D  // bias
                       + static_cast<u64>(L) * D;                                          // pos add
  report.head_macs = static_cast<u64>(D) * config.num_classes;
  report.head_flops = 2 * report.head_macs + config.num_classes + layer_norm_flops(L, D);

  u64 total_flops = report.embed_flops + report.head_flops;
  u64 total_macs = report.embed_macs + report.head_macs;
  u64 baseline_flops = report.embed_flops + report.head_flops;
  u64 baseline_macs = report.embed_macs + report.head_macs;

  for (std::size_t layer = 1; layer <= config.depth; ++layer) {
    const LayerKind kind = config.is_tosa_layer(layer) ? LayerKind::kToSA : LayerKind::kStandard;
    LayerCost c = layer_flops(L, D, config.heads, kind, config.ratio, config.scope,
                              config.selector_channels, config.selector_kernel,
                              options.include_selector);
    c.layer_index = layer;
    total_flops += c.total_flops();
    total_macs += c.macs;
    report.peak_activation_bytes = std::max(report.peak_activation_bytes, c.activation_bytes);
    report.layers.push_back(c);

    const LayerCost base = layer_flops(L, D, config.heads, LayerKind::kStandard, 1.0,
                                       config.scope, config.selector_channels,
                                       config.selector_kernel, false);
    baseline_flops += base.total_flops();
    baseline_macs += base.macs;
  }

  report.total_flops = total_flops;
  report.total_macs = total_macs;
  report.baseline_total_flops = baseline_flops;
  report.baseline_total_macs = baseline_macs;
  report.reduction_fraction =
      1.0 - static_cast<double>(total_flops) / static_cast<double>(baseline_flops);
  report.gflops_paper_convention = static_cast<double>(total_macs) / 1e9;
  return report;
}

std::string CostReport::to_json(int indent) const {
  nlohmann::ordered_json j;
  j["ratio"] = ratio;
  j["skip_scope"] = skip_scope;
  j["include_selector"] = include_selector;
  nlohmann::ordered_json layer_array = nlohmann::ordered_json::array();
  for (const LayerCost& c : layers) {
    nlohmann::ordered_json lj;
    lj["layer"] = c.layer_index;
    lj["kind"] = c.kind == LayerKind::kToSA ? "tosa" : "standard";
    lj["qkv_proj"] = c.qkv_proj;
    lj["attn_matmuls"] = c.attn_matmuls;
    lj["out_proj"] = c.out_proj;
    lj["mlp"] = c.mlp;
    lj["selector"] = c.selector;
    lj["norms"] = c.norms;
    lj["total_flops"] = c.total_flops();
    lj["macs"] = c.macs;
    lj["activation_bytes"] = c.activation_bytes;
    layer_array.push_back(std::move(lj));
  }
  j["layers"] = std::move(layer_array);
  j["embed_flops"] = embed_flops;
  j["embed_macs"] = embed_macs;
  j["head_flops"] = head_flops;
  j["head_macs"] = head_macs;
  j["total_flops"] = total_flops;
  j["total_macs"] = total_macs;
  j["baseline_total_flops"] = baseline_total_flops;
  j["baseline_total_macs"] = baseline_total_macs;
  j["reduction_fraction"] = reduction_fraction;
  j["reduction_percent"] = reduction_fraction * 100.0;
  j["gflops_paper_convention"] = gflops_paper_convention;
  j["peak_activation_bytes"] = peak_activation_bytes;
  return j.dump(indent);
}

}  // namespace tosa
