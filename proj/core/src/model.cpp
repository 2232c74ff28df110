#include "tosa/model.hpp"

#include <algorithm>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "tosa/ops.hpp"
#include "tosa/rng.hpp"
#include "tosa/tape.hpp"

namespace tosa {

bool ModelConfig::is_tosa_layer(std::size_t layer_1based) const {
  return std::find(tosa_layers.begin(), tosa_layers.end(), layer_1based) != tosa_layers.end();
}

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0) {
    problems.push_back("image_size must be a positive multiple of patch_size");
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    problems.push_back("embed_dim must be a positive multiple of heads");
  }
  if (depth == 0) problems.push_back("depth must be positive");
  if (num_classes == 0) problems.push_back("num_classes must be positive");
  if (channels == 0) problems.push_back("channels must be positive");
  if (!(ratio > 0.0) || ratio > 1.0) problems.push_back("ratio must be in (0, 1]");
  if (selector_channels == 0) problems.push_back("selector_channels must be positive");
  if (selector_kernel % 2 == 0) problems.push_back("selector_kernel must be odd");
  std::vector<std::size_t> sorted = tosa_layers;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const std::size_t layer = sorted[i];
    if (layer < 2 || layer > depth) {
      problems.push_back("tosa layer " + std::to_string(layer) + " outside [2, depth]");
    } else if (i > 0 && sorted[i] == sorted[i - 1]) {
      problems.push_back("tosa layer " + std::to_string(layer) + " listed twice");
    } else if (i > 0 && sorted[i] == sorted[i - 1] + 1) {
      problems.push_back("consecutive tosa layers " + std::to_string(sorted[i - 1]) + "," +
                         std::to_string(layer) + ": each needs a standard layer before it");
    }
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "invalid model config:";
    for (const std::string& p : problems) os << "\n  - " << p;
    throw std::invalid_argument(os.str());
  }
}

ModelState ModelState::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelState s;
  s.config = config;
  const std::size_t d = config.embed_dim;
  s.patch_weight = rng.normal_tensor({config.patch_dim(), d}, 0.0, 0.02).set_requires_grad(true);
  s.patch_bias = Tensor::zeros({d}).set_requires_grad(true);
  s.class_token = rng.normal_tensor({1, d}, 0.0, 0.02).set_requires_grad(true);
  s.pos_embed = rng.normal_tensor({config.num_tokens(), d}, 0.0, 0.02).set_requires_grad(true);
  for (std::size_t i = 0; i < config.depth; ++i) {
    s.blocks.push_back(BlockParams::init(d, config.heads, rng));
  }
  std::vector<std::size_t> sorted = config.tosa_layers;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t layer : sorted) {
    s.selectors.emplace(layer, SelectorParams::init(config.heads, config.selector_channels,
                                                    config.selector_kernel, rng));
  }
  s.final_norm = LayerNormParams::init(d);
  s.head_weight = rng.normal_tensor({d, config.num_classes}, 0.0, 0.02).set_requires_grad(true);
  s.head_bias = Tensor::zeros({config.num_classes}).set_requires_grad(true);
  return s;
}

void ModelState::ensure_dense_head(std::uint64_t seed) {
  if (has_dense_head) return;
  Rng rng(seed ^ 0xD15EA5Eull);
  dense_weight = rng.normal_tensor({config.embed_dim, 1}, 0.0, 0.02).set_requires_grad(true);
  dense_bias = Tensor::zeros({1}).set_requires_grad(true);
  has_dense_head = true;
}

std::vector<std::pair<std::string, Tensor>> ModelState::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("patch.weight", patch_weight);
  out.emplace_back("patch.bias", patch_bias);
  out.emplace_back("class_token", class_token);
  out.emplace_back("pos_embed", pos_embed);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect_params("layer" + std::to_string(i + 1), out);
  }
  for (const auto& [layer, sel] : selectors) {
    sel.collect_params("selector" + std::to_string(layer), out);
  }
  out.emplace_back("final_norm.gain", final_norm.gain);
  out.emplace_back("final_norm.bias", final_norm.bias);
  out.emplace_back("head.weight", head_weight);
  out.emplace_back("head.bias", head_bias);
  if (has_dense_head) {
    out.emplace_back("dense.weight", dense_weight);
    out.emplace_back("dense.bias", dense_bias);
  }
  return out;
}

std::vector<Tensor> ModelState::backbone_params() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_params()) {
    if (name.rfind("selector", 0) == 0 || name.rfind("dense.", 0) == 0) continue;
    out.push_back(t);
  }
  return out;
}

std::vector<Tensor> ModelState::selector_params() const {
  std::vector<Tensor> out;
  for (const auto& [layer, sel] : selectors) {
    for (const Tensor& t : sel.param_list()) out.push_back(t);
  }
  return out;
}

Tensor embed(const Tensor& image, const ModelState& state) {
  const ModelConfig& cfg = state.config;
  if (image.rank() != 3 || image.shape()[0] != cfg.channels || image.shape()[1] != cfg.image_size ||
      image.shape()[2] != cfg.image_size) {
    throw std::invalid_argument("embed: image shape " + image.shape_string() + " does not match config");
  }
  const std::size_t p = cfg.patch_size;
  const std::size_t side = cfg.patches_per_side();
  const std::size_t pdim = cfg.patch_dim();

  // patch extraction: the image is input data, not a gradient path
  Tensor patches = Tensor::zeros({cfg.num_patches(), pdim});
  const double* img = image.data();
  const std::size_t hw = cfg.image_size * cfg.image_size;
  for (std::size_t py = 0; py < side; ++py) {
    for (std::size_t px = 0; px < side; ++px) {
      double* dst = patches.data() + (py * side + px) * pdim;
      std::size_t k = 0;
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        for (std::size_t y = 0; y < p; ++y) {
          for (std::size_t x = 0; x < p; ++x, ++k) {
            dst[k] = img[c * hw + (py * p + y) * cfg.image_size + (px * p + x)];
          }
        }
      }
    }
  }

  Tensor projected = add_rows(matmul(patches, state.patch_weight), state.patch_bias);
  Tensor tokens = concat_rows({state.class_token, projected});
  return add(tokens, state.pos_embed);
}

ForwardResult forward(const Tensor& image, const ModelState& state, ForwardMode mode,
                      const ForwardOptions& options) {
  const ModelConfig& cfg = state.config;
  const bool run_tosa = options.tosa_override.value_or(state.tosa_active);
  ForwardResult result;

  Tensor x = embed(image, state);
  AttentionArtifacts previous_artifacts;
  bool have_previous = false;

  for (std::size_t layer = 1; layer <= cfg.depth; ++layer) {
    const BlockParams& block = state.blocks[layer - 1];
    if (run_tosa && cfg.is_tosa_layer(layer)) {
      if (!have_previous) {
        throw std::logic_error("tosa layer " + std::to_string(layer) +
                               " has no preceding standard layer artifacts");
      }
      const SelectorParams& sel = state.selectors.at(layer);
      SelectionPlan plan;
      {
        // routing: frozen selector, detached maps, class token forced in
        NoGradGuard no_grad;
        std::vector<Tensor> detached;
        detached.reserve(previous_artifacts.pre_softmax.size());
        for (const Tensor& b : previous_artifacts.pre_softmax) detached.push_back(b.detach());
        plan = select_tokens(importance_scores(predict_attention(detached, sel)), cfg.ratio, {0});
      }
      ToSALayerParams layer_params{block, cfg.ratio, cfg.scope};
      auto [y, artifacts] = tosa_attention(x, layer_params, plan);
      x = y;
      result.plans.emplace(layer, std::move(plan));
      if (options.collect_artifacts) result.artifacts.push_back(std::move(artifacts));
      have_previous = false;  // subset maps are not a selector signal
    } else {
      auto [y, artifacts] = block_forward(x, block);
      x = y;
      previous_artifacts = artifacts;
      have_previous = true;
      if (options.collect_artifacts) result.artifacts.push_back(std::move(artifacts));
    }
  }

  Tensor features = layer_norm(x, state.final_norm.gain, state.final_norm.bias, 1,
                               state.final_norm.eps);
  switch (mode) {
    case ForwardMode::kClassify:
      result.logits = add_rows(matmul(row(features, 0), state.head_weight), state.head_bias);
      break;
    case ForwardMode::kDense: {
      if (!state.has_dense_head) {
        throw std::invalid_argument("forward: dense mode requires a dense head (train one first)");
      }
      std::vector<std::size_t> patch_rows(cfg.num_patches());
      for (std::size_t i = 0; i < patch_rows.size(); ++i) patch_rows[i] = i + 1;
      Tensor patch_feats = gather_rows(features, patch_rows);
      result.dense = add_rows(matmul(patch_feats, state.dense_weight), state.dense_bias);
      break;
    }
    case ForwardMode::kFeatures:
      result.features = features;
      break;
  }
  return result;
}

void check_config_compatible(const ModelConfig& expected, const ModelConfig& loaded,
                             bool allow_runtime_overrides) {
  std::vector<std::string> mismatches;
  auto cmp = [&](const char* name, auto a, auto b) {
    if (a != b) mismatches.push_back(name);
  };
  cmp("image_size", expected.image_size, loaded.image_size);
  cmp("patch_size", expected.patch_size, loaded.patch_size);
  cmp("channels", expected.channels, loaded.channels);
  cmp("embed_dim", expected.embed_dim, loaded.embed_dim);
  cmp("heads", expected.heads, loaded.heads);
  cmp("depth", expected.depth, loaded.depth);
  cmp("num_classes", expected.num_classes, loaded.num_classes);
  cmp("tosa_layers", expected.tosa_layers, loaded.tosa_layers);
  cmp("selector_channels", expected.selector_channels, loaded.selector_channels);
  cmp("selector_kernel", expected.selector_kernel, loaded.selector_kernel);
  if (!allow_runtime_overrides) {
    cmp("ratio", expected.ratio, loaded.ratio);
    cmp("skip_scope", expected.scope, loaded.scope);
  }
  if (!mismatches.empty()) {
    std::string msg = "checkpoint config mismatch in fields:";
    for (const std::string& m : mismatches) msg += " " + m;
    throw std::runtime_error(msg);
  }
}

}  // namespace tosa
