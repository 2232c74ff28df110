#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tosa/attention.hpp"
#include "tosa/selector.hpp"
#include "tosa/tosa_layer.hpp"

namespace tosa {

/// Structural and routing configuration of the vision transformer.
/// Token-selective layers consume the preceding standard layer's
/// pre-softmax maps, so a selective layer may not sit at layer 1 or
/// directly after another selective layer.
struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t channels = 1;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t depth = 6;
  std::size_t num_classes = 4;
  std::vector<std::size_t> tosa_layers;  // 1-based layer indices
  double ratio = 0.8;
  SkipScope scope = SkipScope::kAttentionOnly;
  std::size_t selector_channels = 16;
  std::size_t selector_kernel = 3;

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t num_tokens() const { return num_patches() + 1; }  // + class token
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  bool is_tosa_layer(std::size_t layer_1based) const;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// All learnable state plus the routing flag. tosa_active starts false;
/// the finetune phase flips it when the scheduled layers convert to
/// token-selective execution.
struct ModelState {
  ModelConfig config;
  Tensor patch_weight;  // [patch_dim × D]
  Tensor patch_bias;    // [D]
  Tensor class_token;   // [1 × D]
  Tensor pos_embed;     // [L × D]
  std::vector<BlockParams> blocks;
  std::map<std::size_t, SelectorParams> selectors;  // keyed by 1-based layer
  LayerNormParams final_norm;
  Tensor head_weight;  // [D × classes]
  Tensor head_bias;    // [classes]
  bool has_dense_head = false;
  Tensor dense_weight;  // [D × 1]
  Tensor dense_bias;    // [1]
  bool tosa_active = false;

  static ModelState init(const ModelConfig& config, std::uint64_t seed);
  void ensure_dense_head(std::uint64_t seed);

  /// Stable name → tensor listing; the checkpoint record order.
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<Tensor> backbone_params() const;  // everything except selectors and dense head
  std::vector<Tensor> selector_params() const;
};

enum class ForwardMode { kClassify, kDense, kFeatures };

struct ForwardOptions {
  std::optional<bool> tosa_override;  // defaults to state.tosa_active
  bool collect_artifacts = false;     // keep per-layer B/A maps
};

struct ForwardResult {
  Tensor logits;    // [1 × classes], classify mode
  Tensor dense;     // [num_patches × 1], dense mode
  Tensor features;  // [L × D], features mode (final-normed)
  std::map<std::size_t, SelectionPlan> plans;  // per ToSA layer, when routing ran
  std::vector<AttentionArtifacts> artifacts;   // per layer, when collected
};

/// Patchify + linear projection + class token + positional embedding.
/// Patches are flattened channel-major, then row-major within the patch.
Tensor embed(const Tensor& image, const ModelState& state);

ForwardResult forward(const Tensor& image, const ModelState& state, ForwardMode mode,
                      const ForwardOptions& options = {});

// ---- checkpoint persistence (little-endian binary, magic "TOSA") ----

void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

/// Byte image of the named parameters (values only), for freeze
/// contracts and bit-exactness checks. The predicate filters by name.
std::vector<std::uint8_t> param_bytes(
    const ModelState& state,
    const std::function<bool(const std::string&)>& name_filter = nullptr);

/// Structural equality check between an expected config and the one a
/// checkpoint carries. ratio/scope are runtime-overridable and ignored
/// when allow_runtime_overrides is set. Throws listing the mismatches.
void check_config_compatible(const ModelConfig& expected, const ModelConfig& loaded,
                             bool allow_runtime_overrides);

}  // namespace tosa
