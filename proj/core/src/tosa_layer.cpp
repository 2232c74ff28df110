#include "tosa/tosa_layer.hpp"

#include <algorithm>
#include <stdexcept>

#include "tosa/ops.hpp"
#include "tosa/tape.hpp"

namespace tosa {

const char* skip_scope_name(SkipScope scope) {
  switch (scope) {
    case SkipScope::kAttentionOnly: return "attention_only";
    case SkipScope::kAttentionAndProj: return "attention_and_proj";
    case SkipScope::kFullLayer: return "full_layer";
  }
  throw std::invalid_argument("unknown skip scope");
}

SkipScope skip_scope_from_name(const std::string& name) {
  if (name == "attention_only") return SkipScope::kAttentionOnly;
  if (name == "attention_and_proj") return SkipScope::kAttentionAndProj;
  if (name == "full_layer") return SkipScope::kFullLayer;
  throw std::invalid_argument("unknown skip scope '" + name +
                              "' (expected attention_only|attention_and_proj|full_layer)");
}

Tensor gather_tokens(const Tensor& x, const std::vector<std::size_t>& indices) {
  for (std::size_t i = 1; i < indices.size(); ++i) {
    if (indices[i] <= indices[i - 1]) {
      throw std::invalid_argument("gather_tokens: indices must be strictly ascending");
    }
  }
  return gather_rows(x, indices);
}

Tensor scatter_merge(const Tensor& attended_out, const Tensor& skipped,
                     const std::vector<std::size_t>& attended_indices,
                     const std::vector<std::size_t>& skipped_indices) {
  if (attended_out.rank() != 2) throw std::invalid_argument("scatter_merge: rank-2 inputs expected");
  const std::size_t width = attended_out.cols();
  const std::size_t total = attended_indices.size() + skipped_indices.size();
  if (attended_out.rows() != attended_indices.size()) {
    throw std::invalid_argument("scatter_merge: attended rows != attended index count");
  }
  const bool have_skipped = !skipped_indices.empty();
  if (have_skipped && (skipped.rank() != 2 || skipped.rows() != skipped_indices.size() ||
                       skipped.cols() != width)) {
    throw std::invalid_argument("scatter_merge: skipped rows/width mismatch");
  }

  // partition check over {0..total-1}
  std::vector<std::uint8_t> seen(total, 0);
  for (const auto* list : {&attended_indices, &skipped_indices}) {
    for (std::size_t idx : *list) {
      if (idx >= total || seen[idx]) {
        throw std::invalid_argument("scatter_merge: index lists do not partition the token set");
      }
      seen[idx] = 1;
    }
  }

  Tensor out = Tensor::zeros({total, width});
  for (std::size_t r = 0; r < attended_indices.size(); ++r) {
    std::copy_n(attended_out.data() + r * width, width, out.data() + attended_indices[r] * width);
  }
  for (std::size_t r = 0; r < skipped_indices.size(); ++r) {
    std::copy_n(skipped.data() + r * width, width, out.data() + skipped_indices[r] * width);
  }

  const bool needs_grad = GradTape::active() && (attended_out.requires_grad() ||
                                                 (have_skipped && skipped.requires_grad()));
  if (needs_grad) {
    out.set_requires_grad(true);
    auto ai = attended_out.impl();
    auto si = skipped.impl();
    auto oi = out.impl();
    GradTape::active()->record([ai, si, oi, attended_indices, skipped_indices, width, have_skipped] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (std::size_t r = 0; r < attended_indices.size(); ++r) {
          const double* src = oi->grad.data() + attended_indices[r] * width;
          double* dst = ai->grad.data() + r * width;
          for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
        }
      }
      if (have_skipped && si->requires_grad) {
        si->ensure_grad();
        for (std::size_t r = 0; r < skipped_indices.size(); ++r) {
          const double* src = oi->grad.data() + skipped_indices[r] * width;
          double* dst = si->grad.data() + r * width;
          for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

namespace {

/// Ascending union of the per-head attended sets, and its complement.
void union_attended(const SelectionPlan& plan, std::vector<std::size_t>& attended_any,
                    std::vector<std::size_t>& skipped_all) {
  std::vector<std::uint8_t> hit(plan.num_tokens, 0);
  for (const HeadPlan& head : plan.heads) {
    for (std::size_t idx : head.attended) hit[idx] = 1;
  }
  for (std::size_t i = 0; i < plan.num_tokens; ++i) {
    (hit[i] ? attended_any : skipped_all).push_back(i);
  }
}

}  // namespace

std::pair<Tensor, AttentionArtifacts> tosa_attention(const Tensor& x,
                                                     const ToSALayerParams& params,
                                                     const SelectionPlan& plan) {
  const AttentionParams& attn = params.block.attn;
  if (x.cols() != attn.dim) {
    throw std::invalid_argument("tosa_attention: input width != model dim");
  }
  if (plan.num_tokens != x.rows()) {
    throw std::invalid_argument("tosa_attention: plan token count " +
                                std::to_string(plan.num_tokens) + " != input rows " +
                                std::to_string(x.rows()));
  }
  if (plan.heads.size() != attn.heads) {
    throw std::invalid_argument("tosa_attention: plan head count != attention heads");
  }

  const std::size_t dh = attn.head_dim();
  Tensor normed = layer_norm(x, params.block.norm1.gain, params.block.norm1.bias, 1,
                             params.block.norm1.eps);

  AttentionArtifacts artifacts;
  std::vector<Tensor> head_outs;
  head_outs.reserve(attn.heads);
  for (std::size_t h = 0; h < attn.heads; ++h) {
    const HeadPlan& head = plan.heads[h];
    Tensor x_att = gather_tokens(normed, head.attended);
    AttendResult r = attend(matmul(x_att, attn.w_q[h]), matmul(x_att, attn.w_k[h]),
                            matmul(x_att, attn.w_v[h]));
    artifacts.pre_softmax.push_back(r.pre_softmax);
    artifacts.softmaxed.push_back(r.softmaxed);
    if (head.skipped.empty()) {
      head_outs.push_back(r.out);
    } else {
      // skip tokens carry this head's slice of the raw input row
      Tensor bypass = slice_cols(gather_tokens(x, head.skipped), h * dh, (h + 1) * dh);
      head_outs.push_back(scatter_merge(r.out, bypass, head.attended, head.skipped));
    }
  }
  Tensor merged = concat_cols(head_outs);  // [L×D]

  auto project = [&](const Tensor& rows) {
    return add_rows(matmul(matmul(rows, attn.w_o), attn.f_weight), attn.f_bias);
  };
  auto mlp_sublayer = [&](const Tensor& rows) {
    return mlp_forward(layer_norm(rows, params.block.norm2.gain, params.block.norm2.bias, 1,
                                  params.block.norm2.eps),
                       params.block.mlp);
  };

  std::vector<std::size_t> attended_any, skipped_all;
  union_attended(plan, attended_any, skipped_all);

  if (params.scope == SkipScope::kAttentionOnly || skipped_all.empty()) {
    Tensor x2 = add(x, project(merged));
    return {add(x2, mlp_sublayer(x2)), std::move(artifacts)};
  }

  // Projection only over rows attended in at least one head; rows skipped
  // by every head leave the attention sublayer untouched.
  Tensor x2_att = add(gather_tokens(x, attended_any), project(gather_tokens(merged, attended_any)));
  Tensor x2_skip = gather_tokens(x, skipped_all);
  Tensor x2 = scatter_merge(x2_att, x2_skip, attended_any, skipped_all);

  if (params.scope == SkipScope::kAttentionAndProj) {
    return {add(x2, mlp_sublayer(x2)), std::move(artifacts)};
  }

  // kFullLayer: fully skipped rows bypass the MLP sublayer as well.
  Tensor y_att = add(x2_att, mlp_sublayer(x2_att));
  Tensor y = scatter_merge(y_att, x2_skip, attended_any, skipped_all);
  return {y, std::move(artifacts)};
}

std::pair<Tensor, PairDiagnostics> tosa_pair_forward(
    const Tensor& x, const BlockParams& standard_params, const ToSALayerParams& tosa_params,
    const SelectorParams& selector_params, const std::vector<std::size_t>& forced,
    bool compute_teacher) {
  PairDiagnostics diag;

  auto [x2, first_artifacts] = block_forward(x, standard_params);
  diag.first_layer = first_artifacts;

  {
    // Selector inference: detached inputs, no tape. Routing takes no
    // gradients and the selector stays frozen under finetuning.
    NoGradGuard no_grad;
    std::vector<Tensor> detached;
    detached.reserve(first_artifacts.pre_softmax.size());
    for (const Tensor& b : first_artifacts.pre_softmax) detached.push_back(b.detach());
    diag.predicted_log_maps = predict_attention(detached, selector_params);
    diag.plan = select_tokens(importance_scores(diag.predicted_log_maps), tosa_params.ratio, forced);
  }

  auto [y, tosa_artifacts] = tosa_attention(x2, tosa_params, diag.plan);
  diag.tosa_attended = tosa_artifacts;

  if (compute_teacher) {
    NoGradGuard no_grad;
    const BlockParams& b = tosa_params.block;
    Tensor normed = layer_norm(x2.detach(), b.norm1.gain, b.norm1.bias, 1, b.norm1.eps);
    diag.teacher_maps = mhsa_forward(normed, b.attn).second.softmaxed;
  }
  return {y, std::move(diag)};
}

}  // namespace tosa
