#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "tosa/costmodel.hpp"

using namespace tosa;

namespace {

// independent closed-form count for one standard layer, matmul flops
// only (multiply-add = 2): 3*2*L*D^2 + 2*2*L^2*D + 2*2*L*D^2 + 2*8*L*D^2
std::uint64_t hand_layer_matmul_flops(std::uint64_t L, std::uint64_t D) {
  return 6 * L * D * D + 4 * L * L * D + 4 * L * D * D + 16 * L * D * D;
}

ModelConfig deit_tiny_shape() {
  ModelConfig c;
  c.image_size = 224;
  c.patch_size = 16;
  c.channels = 3;
  c.embed_dim = 192;
  c.heads = 3;
  c.depth = 12;
  c.num_classes = 1000;
  c.tosa_layers = {};
  c.ratio = 1.0;
  return c;
}

}  // namespace

TEST_CASE("r=1 selective layer equals the standard layer outside selector overhead") {
  const LayerCost standard =
      layer_flops(65, 64, 4, LayerKind::kStandard, 1.0, SkipScope::kAttentionOnly, 16, 3);
  for (SkipScope scope : {SkipScope::kAttentionOnly, SkipScope::kAttentionAndProj,
                          SkipScope::kFullLayer}) {
    const LayerCost selective = layer_flops(65, 64, 4, LayerKind::kToSA, 1.0, scope, 16, 3);
    CHECK(selective.qkv_proj == standard.qkv_proj);
    CHECK(selective.attn_matmuls == standard.attn_matmuls);
    CHECK(selective.out_proj == standard.out_proj);
    CHECK(selective.mlp == standard.mlp);
    CHECK(selective.selector > 0);
    CHECK(standard.selector == 0);
  }
}

TEST_CASE("attention matmul component scales exactly as (K/L)^2") {
  for (std::size_t L : {20u, 64u, 65u, 197u}) {
    const LayerCost standard =
        layer_flops(L, 64, 4, LayerKind::kStandard, 1.0, SkipScope::kAttentionOnly, 16, 3);
    for (double r : {0.5, 0.7, 0.8}) {
      const LayerCost selective =
          layer_flops(L, 64, 4, LayerKind::kToSA, r, SkipScope::kAttentionOnly, 16, 3);
      const std::uint64_t k = selected_token_count(r, L);
      // exact rational identity: attn_tosa * L^2 == attn_std * K^2
      CHECK(selective.attn_matmuls * L * L == standard.attn_matmuls * k * k);
      // linear components scale as K/L
      CHECK(selective.qkv_proj * L == standard.qkv_proj * k);
    }
  }
}

TEST_CASE("scope controls which components shrink") {
  const std::size_t L = 65;
  const double r = 0.8;
  const LayerCost standard =
      layer_flops(L, 64, 4, LayerKind::kStandard, 1.0, SkipScope::kAttentionOnly, 16, 3);
  const LayerCost attn_only =
      layer_flops(L, 64, 4, LayerKind::kToSA, r, SkipScope::kAttentionOnly, 16, 3);
  const LayerCost and_proj =
      layer_flops(L, 64, 4, LayerKind::kToSA, r, SkipScope::kAttentionAndProj, 16, 3);
  const LayerCost full =
      layer_flops(L, 64, 4, LayerKind::kToSA, r, SkipScope::kFullLayer, 16, 3);

  CHECK(attn_only.out_proj == standard.out_proj);
  CHECK(attn_only.mlp == standard.mlp);
  CHECK(and_proj.out_proj < standard.out_proj);
  CHECK(and_proj.mlp == standard.mlp);
  CHECK(full.out_proj < standard.out_proj);
  CHECK(full.mlp < standard.mlp);
  CHECK(full.total_flops() < and_proj.total_flops());
  CHECK(and_proj.total_flops() < attn_only.total_flops());
}

TEST_CASE("baseline equals the hand-derived closed form") {
  const std::size_t L = 197, D = 192;
  const LayerCost c = layer_flops(L, D, 3, LayerKind::kStandard, 1.0,
                                  SkipScope::kAttentionOnly, 16, 3);
  const std::uint64_t matmul_only =
      c.qkv_proj + (c.attn_matmuls - 5 * 3 * L * L) + (c.out_proj - L * D) +
      (c.mlp - L * 4 * D - L * D - 6 * L * 4 * D);
  CHECK(matmul_only == hand_layer_matmul_flops(L, D));
  CHECK(c.macs * 2 == hand_layer_matmul_flops(L, D));
}

TEST_CASE("DeiT-Tiny shape lands within 15 percent of 1.3 GFLOPs") {
  const CostReport report = model_cost(deit_tiny_shape());
  CHECK(report.gflops_paper_convention > 1.3 * 0.85);
  CHECK(report.gflops_paper_convention < 1.3 * 1.15);
}

TEST_CASE("model cost: zero reduction without selective layers, additive totals") {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 4;
  c.embed_dim = 64;
  c.heads = 4;
  c.depth = 6;
  c.tosa_layers = {};
  const CostReport report = model_cost(c);
  CHECK(report.reduction_fraction == 0.0);
  CHECK(report.total_flops == report.baseline_total_flops);

  std::uint64_t sum = report.embed_flops + report.head_flops;
  for (const LayerCost& layer : report.layers) sum += layer.total_flops();
  CHECK(sum == report.total_flops);
}

TEST_CASE("reduction is monotone non-increasing in r") {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 4;
  c.embed_dim = 64;
  c.heads = 4;
  c.depth = 6;
  c.tosa_layers = {2, 4, 6};
  c.scope = SkipScope::kFullLayer;

  CostModelOptions options;
  for (bool include_selector : {true, false}) {
    options.include_selector = include_selector;
    double previous = 1.0;
    for (double r = 0.5; r <= 1.0001; r += 0.05) {
      c.ratio = std::min(r, 1.0);
      const double reduction = model_cost(c, options).reduction_fraction;
      CHECK(reduction <= previous + 1e-12);
      previous = reduction;
    }
    // r=1 with selector excluded: exactly zero
    c.ratio = 1.0;
    if (!include_selector) CHECK(model_cost(c, options).reduction_fraction == 0.0);
  }
}

TEST_CASE("DeiT-Tiny schedule diagnostic reports every scope") {
  // Table-row shape with the 2,4,6,8,10 schedule at r=0.8; no scope
  // reproduces the published 25.8% under these counting conventions, so
  // this records the spread instead of asserting the number.
  ModelConfig c = deit_tiny_shape();
  c.tosa_layers = {2, 4, 6, 8, 10};
  c.ratio = 0.8;
  double best = 0.0;
  for (SkipScope scope : {SkipScope::kAttentionOnly, SkipScope::kAttentionAndProj,
                          SkipScope::kFullLayer}) {
    c.scope = scope;
    const CostReport report = model_cost(c, {.include_selector = false});
    MESSAGE("scope ", skip_scope_name(scope), ": reduction ",
            report.reduction_fraction * 100.0, "% (paper reports 25.8)");
    CHECK(report.reduction_fraction > 0.0);
    best = std::max(best, report.reduction_fraction);
  }
  CHECK(best < 0.258);  // the published figure stays unexplained
}

TEST_CASE("cost report JSON carries the stable key set") {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 4;
  c.embed_dim = 64;
  c.heads = 4;
  c.depth = 6;
  c.tosa_layers = {2, 4};
  const CostReport report = model_cost(c);
  const nlohmann::json j = nlohmann::json::parse(report.to_json());
  for (const char* key :
       {"ratio", "skip_scope", "include_selector", "layers", "embed_flops", "head_flops",
        "total_flops", "total_macs", "baseline_total_flops", "reduction_fraction",
        "reduction_percent", "gflops_paper_convention", "peak_activation_bytes"}) {
    CHECK_MESSAGE(j.contains(key), key);
  }
  REQUIRE(j["layers"].size() == 6);
  for (const char* key : {"layer", "kind", "qkv_proj", "attn_matmuls", "out_proj", "mlp",
                          "selector", "norms", "total_flops", "macs", "activation_bytes"}) {
    CHECK_MESSAGE(j["layers"][0].contains(key), key);
  }
  CHECK(j["layers"][1]["kind"] == "tosa");
  CHECK(j["layers"][0]["kind"] == "standard");
}
