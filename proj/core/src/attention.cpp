#include "tosa/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace tosa {

namespace {
constexpr double kInitStd = 0.02;
}

AttentionParams AttentionParams::init(std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: dim must be a positive multiple of heads");
  }
  AttentionParams p;
  p.dim = dim;
  p.heads = heads;
  const std::size_t dh = dim / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    p.w_q.push_back(rng.normal_tensor({dim, dh}, 0.0, kInitStd).set_requires_grad(true));
    p.w_k.push_back(rng.normal_tensor({dim, dh}, 0.0, kInitStd).set_requires_grad(true));
    p.w_v.push_back(rng.normal_tensor({dim, dh}, 0.0, kInitStd).set_requires_grad(true));
  }
  p.w_o = rng.normal_tensor({dim, dim}, 0.0, kInitStd).set_requires_grad(true);
  p.f_weight = rng.normal_tensor({dim, dim}, 0.0, kInitStd).set_requires_grad(true);
  p.f_bias = Tensor::zeros({dim}).set_requires_grad(true);
  return p;
}

void AttentionParams::collect_params(const std::string& prefix,
                                     std::vector<std::pair<std::string, Tensor>>& out) const {
  for (std::size_t h = 0; h < heads; ++h) {
    out.emplace_back(prefix + ".w_q" + std::to_string(h), w_q[h]);
    out.emplace_back(prefix + ".w_k" + std::to_string(h), w_k[h]);
    out.emplace_back(prefix + ".w_v" + std::to_string(h), w_v[h]);
  }
  out.emplace_back(prefix + ".w_o", w_o);
  out.emplace_back(prefix + ".f_weight", f_weight);
  out.emplace_back(prefix + ".f_bias", f_bias);
}

LayerNormParams LayerNormParams::init(std::size_t dim) {
  LayerNormParams p;
  p.gain = Tensor::full({dim}, 1.0).set_requires_grad(true);
  p.bias = Tensor::zeros({dim}).set_requires_grad(true);
  return p;
}

MlpParams MlpParams::init(std::size_t dim, Rng& rng) {
  MlpParams p;
  p.w1 = rng.normal_tensor({dim, 4 * dim}, 0.0, kInitStd).set_requires_grad(true);
  p.b1 = Tensor::zeros({4 * dim}).set_requires_grad(true);
  p.w2 = rng.normal_tensor({4 * dim, dim}, 0.0, kInitStd).set_requires_grad(true);
  p.b2 = Tensor::zeros({dim}).set_requires_grad(true);
  return p;
}

BlockParams BlockParams::init(std::size_t dim, std::size_t heads, Rng& rng) {
  BlockParams p;
  p.attn = AttentionParams::init(dim, heads, rng);
  p.mlp = MlpParams::init(dim, rng);
  p.norm1 = LayerNormParams::init(dim);
  p.norm2 = LayerNormParams::init(dim);
  return p;
}

void BlockParams::collect_params(const std::string& prefix,
                                 std::vector<std::pair<std::string, Tensor>>& out) const {
  attn.collect_params(prefix + ".attn", out);
  out.emplace_back(prefix + ".mlp.w1", mlp.w1);
  out.emplace_back(prefix + ".mlp.b1", mlp.b1);
  out.emplace_back(prefix + ".mlp.w2", mlp.w2);
  out.emplace_back(prefix + ".mlp.b2", mlp.b2);
  out.emplace_back(prefix + ".norm1.gain", norm1.gain);
  out.emplace_back(prefix + ".norm1.bias", norm1.bias);
  out.emplace_back(prefix + ".norm2.gain", norm2.gain);
  out.emplace_back(prefix + ".norm2.bias", norm2.bias);
}

QkvTriple project_qkv(const Tensor& x, const AttentionParams& params, std::size_t head) {
  if (head >= params.heads) {
    throw std::out_of_range("project_qkv: head " + std::to_string(head) + " out of range");
  }
  if (x.cols() != params.dim) {
    throw std::invalid_argument("project_qkv: input width " + std::to_string(x.cols()) +
                                " != model dim " + std::to_string(params.dim));
  }
  return {matmul(x, params.w_q[head]), matmul(x, params.w_k[head]), matmul(x, params.w_v[head])};
}

AttendResult attend(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.cols() != k.cols() || q.rows() != k.rows() || k.rows() != v.rows()) {
    throw std::invalid_argument("attend: inconsistent Q/K/V shapes " + q.shape_string() + " " +
                                k.shape_string() + " " + v.shape_string());
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  AttendResult r;
  r.pre_softmax = scale(matmul_nt(q, k), inv_scale);
  r.softmaxed = softmax(r.pre_softmax, 1);
  r.out = matmul(r.softmaxed, v);
  return r;
}

std::pair<Tensor, AttentionArtifacts> mhsa_forward(const Tensor& x, const AttentionParams& params) {
  AttentionArtifacts artifacts;
  std::vector<Tensor> head_outs;
  head_outs.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    QkvTriple qkv = project_qkv(x, params, h);
    AttendResult r = attend(qkv.q, qkv.k, qkv.v);
    head_outs.push_back(r.out);
    artifacts.pre_softmax.push_back(r.pre_softmax);
    artifacts.softmaxed.push_back(r.softmaxed);
  }
  Tensor merged = matmul(concat_cols(head_outs), params.w_o);
  Tensor y = add_rows(matmul(merged, params.f_weight), params.f_bias);
  return {y, std::move(artifacts)};
}

Tensor mlp_forward(const Tensor& x, const MlpParams& mlp) {
  Tensor hidden = gelu(add_rows(matmul(x, mlp.w1), mlp.b1));
  return add_rows(matmul(hidden, mlp.w2), mlp.b2);
}

std::pair<Tensor, AttentionArtifacts> block_forward(const Tensor& x, const BlockParams& params) {
  auto [attn_out, artifacts] =
      mhsa_forward(layer_norm(x, params.norm1.gain, params.norm1.bias, 1, params.norm1.eps),
                   params.attn);
  Tensor x2 = add(x, attn_out);
  Tensor mlp_out =
      mlp_forward(layer_norm(x2, params.norm2.gain, params.norm2.bias, 1, params.norm2.eps),
                  params.mlp);
  return {add(x2, mlp_out), std::move(artifacts)};
}

}  // namespace tosa
