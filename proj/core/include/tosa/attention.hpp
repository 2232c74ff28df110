#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tosa/ops.hpp"
#include "tosa/rng.hpp"
#include "tosa/tensor.hpp"

namespace tosa {

/// Multi-head self-attention parameters. Each head projects with its
/// own [D × D/H] matrices; the concatenated head outputs go through
/// W_O and then the affine map F. W_O and F stay separate so
/// checkpoints keep both.
struct AttentionParams {
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::vector<Tensor> w_q, w_k, w_v;  // per head, [D × D/H]
  Tensor w_o;                         // [D × D]
  Tensor f_weight;                    // [D × D]
  Tensor f_bias;                      // [D]

  std::size_t head_dim() const { return dim / heads; }
  static AttentionParams init(std::size_t dim, std::size_t heads, Rng& rng);
  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>& out) const;
};

/// Per-head attention maps of one layer: pre-softmax scaled logits B
/// and their row-softmax A. These are the selector's input signal and
/// the distillation teacher, respectively.
struct AttentionArtifacts {
  std::vector<Tensor> pre_softmax;  // B, per head [L×L]
  std::vector<Tensor> softmaxed;    // A, per head [L×L]
};

struct LayerNormParams {
  Tensor gain, bias;
  double eps = 1e-6;
  static LayerNormParams init(std::size_t dim);
};

struct MlpParams {
  Tensor w1, b1, w2, b2;  // D -> 4D -> D with GELU
  static MlpParams init(std::size_t dim, Rng& rng);
};

/// Pre-norm transformer block: x' = x + MHSA(LN1(x)), y = x' + MLP(LN2(x')).
struct BlockParams {
  AttentionParams attn;
  MlpParams mlp;
  LayerNormParams norm1, norm2;

  static BlockParams init(std::size_t dim, std::size_t heads, Rng& rng);
  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>& out) const;
};

struct QkvTriple {
  Tensor q, k, v;
};

struct AttendResult {
  Tensor out;          // [n × d_h]
  Tensor pre_softmax;  // B, [n × n]
  Tensor softmaxed;    // A, [n × n]
};

/// Q/K/V of one head: x[L×D] times that head's projection matrices.
QkvTriple project_qkv(const Tensor& x, const AttentionParams& params, std::size_t head);

/// B = Q K^T / sqrt(d_h) with d_h the per-head width, A = row softmax
/// of B, out = A V.
AttendResult attend(const Tensor& q, const Tensor& k, const Tensor& v);

/// All heads attended, concatenated in head order, then W_O and F.
std::pair<Tensor, AttentionArtifacts> mhsa_forward(const Tensor& x, const AttentionParams& params);

Tensor mlp_forward(const Tensor& x, const MlpParams& mlp);

std::pair<Tensor, AttentionArtifacts> block_forward(const Tensor& x, const BlockParams& params);

}  // namespace tosa
