#include "tosa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tosa {

namespace {

// ---- raw GEMM kernels (also used for the backward products) ----
// kernel_mm_nn: c[M×N] (+)= a[M×K] · b[K×N]
// kernel_mm_nt: c[M×N] (+)= a[M×K] · (b[N×K])^T
// kernel_mm_tn: c[K×N] (+)= (a[M×K])^T · b[M×N]

void kernel_mm_nn(double* c, const double* a, const double* b,
                  std::size_t M, std::size_t K, std::size_t N, bool acc) {
  if (!acc) std::fill(c, c + M * N, 0.0);
  for (std::size_t i = 0; i < M; ++i) {
    const double* arow = a + i * K;
    double* crow = c + i * N;
    for (std::size_t p = 0; p < K; ++p) {
      const double av = arow[p];
      const double* brow = b + p * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

void kernel_mm_nt(double* c, const double* a, const double* b,
                  std::size_t M, std::size_t K, std::size_t N, bool acc) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* arow = a + i * K;
    double* crow = c + i * N;
    for (std::size_t j = 0; j < N; ++j) {
      const double* brow = b + j * K;
      double s = 0.0;
      for (std::size_t p = 0; p < K; ++p) s += arow[p] * brow[p];
      crow[j] = acc ? crow[j] + s : s;
    }
  }
}

void kernel_mm_tn(double* c, const double* a, const double* b,
                  std::size_t M, std::size_t K, std::size_t N, bool acc) {
  if (!acc) std::fill(c, c + K * N, 0.0);
  for (std::size_t i = 0; i < M; ++i) {
    const double* arow = a + i * K;
    const double* brow = b + i * N;
    for (std::size_t p = 0; p < K; ++p) {
      const double av = arow[p];
      double* crow = c + p * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) +
                                ", got shape " + t.shape_string());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a, b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() +
                                " vs " + b.shape_string());
  }
}

using Impl = std::shared_ptr<Tensor::Impl>;

}  // namespace

LaneView lane_view(const std::vector<std::size_t>& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw std::invalid_argument("axis " + std::to_string(axis) + " invalid for shape " +
                                shape_to_string(shape));
  }
  LaneView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

// ---- matrix products ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " + a.shape_string() +
                                " x " + b.shape_string());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  kernel_mm_nn(out.data(), a.data(), b.data(), m, k, n, false);
  ensure_finite(out, "matmul");
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    GradTape::active()->record([ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        kernel_mm_nt(ai->grad.data(), g, bi->value.data(), m, n, k, true);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        kernel_mm_tn(bi->grad.data(), ai->value.data(), g, m, k, n, true);
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: contraction dims disagree, " + a.shape_string() +
                                " x " + b.shape_string() + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros({m, n});
  kernel_mm_nt(out.data(), a.data(), b.data(), m, k, n, false);
  ensure_finite(out, "matmul_nt");
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    GradTape::active()->record([ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        kernel_mm_nn(ai->grad.data(), g, bi->value.data(), m, n, k, true);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        kernel_mm_tn(bi->grad.data(), g, ai->value.data(), m, n, k, true);
      }
    });
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn");
  require_rank(b, 2, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("matmul_tn: contraction dims disagree, " + a.shape_string() +
                                "^T x " + b.shape_string());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({k, n});
  kernel_mm_tn(out.data(), a.data(), b.data(), m, k, n, false);
  ensure_finite(out, "matmul_tn");
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    GradTape::active()->record([ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        kernel_mm_nt(ai->grad.data(), bi->value.data(), g, m, n, k, true);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        kernel_mm_nn(bi->grad.data(), ai->value.data(), g, m, k, n, true);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  }
  if (want_grad({&a})) {
    out.set_requires_grad(true);
    Impl ai = a.impl(), oi = out.impl();
    GradTape::active()->record([ai, oi, m, n] {
      if (oi->grad.empty() || !ai->requires_grad) return;
      ai->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ai->grad[i * n + j] += oi->grad[j * m + i];
      }
    });
  }
  return out;
}

// ---- normalizers ---------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  const LaneView lv = lane_view(x.shape(), axis);
  Tensor out = Tensor::zeros(x.shape());
  const double* xv = x.data();
  double* ov = out.data();
  const std::size_t stride = lv.stride();
  for (std::size_t lane = 0; lane < lv.lane_count(); ++lane) {
    const std::size_t base = lv.lane_base(lane);
    double mx = xv[base];
    for (std::size_t j = 1; j < lv.len; ++j) mx = std::max(mx, xv[base + j * stride]);
    double sum = 0.0;
    for (std::size_t j = 0; j < lv.len; ++j) {
      const double e = std::exp(xv[base + j * stride] - mx);
      ov[base + j * stride] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < lv.len; ++j) ov[base + j * stride] *= inv;
  }
  ensure_finite(out, "softmax");
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Impl xi = x.impl(), oi = out.impl();
    GradTape::active()->record([xi, oi, lv, stride] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      for (std::size_t lane = 0; lane < lv.lane_count(); ++lane) {
        const std::size_t base = lv.lane_base(lane);
        double dot = 0.0;
        for (std::size_t j = 0; j < lv.len; ++j) {
          const std::size_t ix = base + j * stride;
          dot += oi->grad[ix] * oi->value[ix];
        }
        for (std::size_t j = 0; j < lv.len; ++j) {
          const std::size_t ix = base + j * stride;
          xi->grad[ix] += oi->value[ix] * (oi->grad[ix] - dot);
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const LaneView lv = lane_view(x.shape(), axis);
  Tensor out = Tensor::zeros(x.shape());
  const double* xv = x.data();
  double* ov = out.data();
  const std::size_t stride = lv.stride();
  for (std::size_t lane = 0; lane < lv.lane_count(); ++lane) {
    const std::size_t base = lv.lane_base(lane);
    double mx = xv[base];
    for (std::size_t j = 1; j < lv.len; ++j) mx = std::max(mx, xv[base + j * stride]);
    double sum = 0.0;
    for (std::size_t j = 0; j < lv.len; ++j) sum += std::exp(xv[base + j * stride] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < lv.len; ++j) {
      const std::size_t ix = base + j * stride;
      ov[ix] = xv[ix] - lse;
    }
  }
  ensure_finite(out, "log_softmax");
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Impl xi = x.impl(), oi = out.impl();
    GradTape::active()->record([xi, oi, lv, stride] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      for (std::size_t lane = 0; lane < lv.lane_count(); ++lane) {
        const std::size_t base = lv.lane_base(lane);
        double gsum = 0.0;
        for (std::size_t j = 0; j < lv.len; ++j) gsum += oi->grad[base + j * stride];
        for (std::size_t j = 0; j < lv.len; ++j) {
          const std::size_t ix = base + j * stride;
          xi->grad[ix] += oi->grad[ix] - std::exp(oi->value[ix]) * gsum;
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  std::size_t axis, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  const LaneView lv = lane_view(x.shape(), axis);
  if (gain.size() != lv.len || bias.size() != lv.len) {
    throw std::invalid_argument("layer_norm: gain/bias size must equal the axis extent " +
                                std::to_string(lv.len));
  }
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_sigma(lv.lane_count());
  const double* xv = x.data();
  const double* gv = gain.data();
  const double* bv = bias.data();
  double* ov = out.data();
  const std::size_t stride = lv.stride();
  const double inv_len = 1.0 / static_cast<double>(lv.len);
  for (std::size_t lane = 0; lane < lv.lane_count(); ++lane) {
    const std::size_t base = lv.lane_base(lane);
    double mean = 0.0;
    for (std::size_t j = 0; j < lv.len; ++j) mean += xv[base + j * stride];
    mean *= inv_len;
    double var = 0.0;
    for (std::size_t j = 0; j < lv.len; ++j) {
      const double d = xv[base + j * stride] - mean;
      var += d * d;
    }
    var *= inv_len;
    const double inv_s = 1.0 / std::sqrt(var + eps);
    inv_sigma[lane] = inv_s;
    for (std::size_t j = 0; j < lv.len; ++j) {
      const std::size_t ix = base + j * stride;
      const double xh = (xv[ix] - mean) * inv_s;
      xhat[ix] = xh;
      ov[ix] = gv[j] * xh + bv[j];
    }
  }
  ensure_finite(out, "layer_norm");
  if (want_grad({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    Impl xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    GradTape::active()->record(
        [xi, gi, bi, oi, lv, stride, inv_len, xhat = std::move(xhat),
         inv_sigma = std::move(inv_sigma)] {
          if (oi->grad.empty()) return;
          if (gi->requires_grad) gi->ensure_grad();
          if (bi->requires_grad) bi->ensure_grad();
          if (xi->requires_grad) xi->ensure_grad();
          for (std::size_t lane = 0; lane < lv.lane_count(); ++lane) {
            const std::size_t base = lv.lane_base(lane);
            if (gi->requires_grad || bi->requires_grad) {
              for (std::size_t j = 0; j < lv.len; ++j) {
                const std::size_t ix = base + j * stride;
                if (gi->requires_grad) gi->grad[j] += oi->grad[ix] * xhat[ix];
                if (bi->requires_grad) bi->grad[j] += oi->grad[ix];
              }
            }
            if (xi->requires_grad) {
              double m1 = 0.0, m2 = 0.0;
              for (std::size_t j = 0; j < lv.len; ++j) {
                const std::size_t ix = base + j * stride;
                const double dxh = oi->grad[ix] * gi->value[j];
                m1 += dxh;
                m2 += dxh * xhat[ix];
              }
              m1 *= inv_len;
              m2 *= inv_len;
              for (std::size_t j = 0; j < lv.len; ++j) {
                const std::size_t ix = base + j * stride;
                const double dxh = oi->grad[ix] * gi->value[j];
                xi->grad[ix] += inv_sigma[lane] * (dxh - m1 - xhat[ix] * m2);
              }
            }
          }
        });
  }
  return out;
}

// ---- 1D convolution -------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  require_rank(x, 2, "conv1d");
  require_rank(kernels, 3, "conv1d");
  require_rank(bias, 1, "conv1d");
  const std::size_t c_in = x.shape()[0], len = x.shape()[1];
  const std::size_t c_out = kernels.shape()[0], kw = kernels.shape()[2];
  if (kernels.shape()[1] != c_in) {
    throw std::invalid_argument("conv1d: kernel in-channels " + std::to_string(kernels.shape()[1]) +
                                " != input channels " + std::to_string(c_in));
  }
  if (bias.shape()[0] != c_out) {
    throw std::invalid_argument("conv1d: bias size != out-channels");
  }
  if (kw % 2 == 0) {
    throw std::invalid_argument("conv1d: kernel width must be odd, got " + std::to_string(kw));
  }
  const std::size_t pad = (kw - 1) / 2;
  Tensor out = Tensor::zeros({c_out, len});
  const double* xv = x.data();
  const double* kv = kernels.data();
  const double* bv = bias.data();
  double* ov = out.data();
  for (std::size_t co = 0; co < c_out; ++co) {
    for (std::size_t t = 0; t < len; ++t) {
      double s = bv[co];
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* krow = kv + (co * c_in + ci) * kw;
        const double* xrow = xv + ci * len;
        for (std::size_t j = 0; j < kw; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) s += krow[j] * xrow[src];
        }
      }
      ov[co * len + t] = s;
    }
  }
  ensure_finite(out, "conv1d");
  if (want_grad({&x, &kernels, &bias})) {
    out.set_requires_grad(true);
    Impl xi = x.impl(), ki = kernels.impl(), bi = bias.impl(), oi = out.impl();
    GradTape::active()->record([xi, ki, bi, oi, c_in, c_out, len, kw, pad] {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t co = 0; co < c_out; ++co) {
          double s = 0.0;
          for (std::size_t t = 0; t < len; ++t) s += g[co * len + t];
          bi->grad[co] += s;
        }
      }
      if (ki->requires_grad) ki->ensure_grad();
      if (xi->requires_grad) xi->ensure_grad();
      if (!ki->requires_grad && !xi->requires_grad) return;
      for (std::size_t co = 0; co < c_out; ++co) {
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          const double* krow = ki->value.data() + (co * c_in + ci) * kw;
          double* kgrad = ki->requires_grad ? ki->grad.data() + (co * c_in + ci) * kw : nullptr;
          const double* xrow = xi->value.data() + ci * len;
          double* xgrad = xi->requires_grad ? xi->grad.data() + ci * len : nullptr;
          for (std::size_t t = 0; t < len; ++t) {
            const double gv = g[co * len + t];
            for (std::size_t j = 0; j < kw; ++j) {
              const std::ptrdiff_t src =
                  static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
              if (kgrad) kgrad[j] += gv * xrow[src];
              if (xgrad) xgrad[src] += gv * krow[j];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---- elementwise ----------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& x, const char* name, Fwd fwd, Bwd dfdx) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = fwd(x.data()[i]);
  ensure_finite(out, name);
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Impl xi = x.impl(), oi = out.impl();
    GradTape::active()->record([xi, oi, dfdx] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->value.size(); ++i) {
        xi->grad[i] += oi->grad[i] * dfdx(xi->value[i]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  ensure_finite(out, "add");
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    GradTape::active()->record([ai, bi, oi] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  ensure_finite(out, "sub");
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    GradTape::active()->record([ai, bi, oi] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->grad.size(); ++i) bi->grad[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  ensure_finite(out, "mul");
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Impl ai = a.impl(), bi = b.impl(), oi = out.impl();
    GradTape::active()->record([ai, bi, oi] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i] * bi->value[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->grad.size(); ++i) bi->grad[i] += oi->grad[i] * ai->value[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw std::invalid_argument("scale: factor must be finite");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  ensure_finite(out, "scale");
  if (want_grad({&a})) {
    out.set_requires_grad(true);
    Impl ai = a.impl(), oi = out.impl();
    GradTape::active()->record([ai, oi, c] {
      if (oi->grad.empty() || !ai->requires_grad) return;
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i] * c;
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  constexpr double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return unary_elementwise(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) +
               v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor add_rows(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_rows");
  require_rank(bias, 1, "add_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.shape()[0] != n) {
    throw std::invalid_argument("add_rows: bias length " + std::to_string(bias.shape()[0]) +
                                " != row width " + std::to_string(n));
  }
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + bias.data()[j];
  }
  ensure_finite(out, "add_rows");
  if (want_grad({&x, &bias})) {
    out.set_requires_grad(true);
    Impl xi = x.impl(), bi = bias.impl(), oi = out.impl();
    GradTape::active()->record([xi, bi, oi, m, n] {
      if (oi->grad.empty()) return;
      if (xi->requires_grad) {
        xi->ensure_grad();
        for (std::size_t i = 0; i < m * n; ++i) xi->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) bi->grad[j] += oi->grad[i * n + j];
        }
      }
    });
  }
  return out;
}

// ---- reshaping / routing ----------------------------------------------------

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
  require_rank(x, 2, "gather_rows");
  if (indices.empty()) throw std::invalid_argument("gather_rows: empty index list");
  const std::size_t n = x.cols();
  for (std::size_t idx : indices) {
    if (idx >= x.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx) + " out of range for " +
                              std::to_string(x.rows()) + " rows");
    }
  }
  Tensor out = Tensor::zeros({indices.size(), n});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(x.data() + indices[r] * n, n, out.data() + r * n);
  }
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Impl xi = x.impl(), oi = out.impl();
    GradTape::active()->record([xi, oi, indices, n] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      for (std::size_t r = 0; r < indices.size(); ++r) {
        double* dst = xi->grad.data() + indices[r] * n;
        const double* src = oi->grad.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor row(const Tensor& x, std::size_t i) { return gather_rows(x, {i}); }

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    if (p.cols() != n) throw std::invalid_argument("concat_rows: column mismatch");
    m += p.rows();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({m, n});
  std::size_t at = 0;
  for (const Tensor& p : parts) {
    std::copy_n(p.data(), p.size(), out.data() + at * n);
    at += p.rows();
  }
  if (GradTape::active() && any_grad) {
    out.set_requires_grad(true);
    std::vector<Impl> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    Impl oi = out.impl();
    GradTape::active()->record([impls, oi, n] {
      if (oi->grad.empty()) return;
      std::size_t at = 0;
      for (const Impl& pi : impls) {
        const std::size_t count = pi->value.size();
        if (pi->requires_grad) {
          pi->ensure_grad();
          for (std::size_t i = 0; i < count; ++i) pi->grad[i] += oi->grad[at + i];
        }
        at += count;
      }
      (void)n;
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    if (p.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
    n += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({m, n});
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(p.data() + i * pc, pc, out.data() + i * n + col);
    }
    col += pc;
  }
  if (GradTape::active() && any_grad) {
    out.set_requires_grad(true);
    std::vector<Impl> impls;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      widths.push_back(p.cols());
    }
    Impl oi = out.impl();
    GradTape::active()->record([impls, widths, oi, m, n] {
      if (oi->grad.empty()) return;
      std::size_t col = 0;
      for (std::size_t pi = 0; pi < impls.size(); ++pi) {
        const std::size_t pc = widths[pi];
        if (impls[pi]->requires_grad) {
          impls[pi]->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < pc; ++j) {
              impls[pi]->grad[i * pc + j] += oi->grad[i * n + col + j];
            }
          }
        }
        col += pc;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  require_rank(x, 2, "slice_cols");
  if (c0 >= c1 || c1 > x.cols()) {
    throw std::invalid_argument("slice_cols: invalid range [" + std::to_string(c0) + ", " +
                                std::to_string(c1) + ") for width " + std::to_string(x.cols()));
  }
  const std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
  Tensor out = Tensor::zeros({m, w});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(x.data() + i * n + c0, w, out.data() + i * w);
  }
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Impl xi = x.impl(), oi = out.impl();
    GradTape::active()->record([xi, oi, m, n, w, c0] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) xi->grad[i * n + c0 + j] += oi->grad[i * w + j];
      }
    });
  }
  return out;
}

// ---- reductions / losses ----------------------------------------------------

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
  Tensor out = Tensor::scalar(s);
  ensure_finite(out, "sum_all");
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Impl xi = x.impl(), oi = out.impl();
    GradTape::active()->record([xi, oi] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      const double g = oi->grad[0];
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor kl_divergence(const Tensor& log_p_pred, const Tensor& p_true, std::size_t axis) {
  require_same_shape(log_p_pred, p_true, "kl_divergence");
  if (p_true.requires_grad()) {
    throw std::invalid_argument("kl_divergence: the target distribution is a teacher signal and must not require gradients");
  }
  const LaneView lv = lane_view(p_true.shape(), axis);
  const std::size_t stride = lv.stride();
  const double* pv = p_true.data();
  const double* lp = log_p_pred.data();
  double total = 0.0;
  for (std::size_t lane = 0; lane < lv.lane_count(); ++lane) {
    const std::size_t base = lv.lane_base(lane);
    double psum = 0.0;
    for (std::size_t j = 0; j < lv.len; ++j) {
      const double p = pv[base + j * stride];
      if (p < 0.0) throw std::invalid_argument("kl_divergence: p_true has a negative entry");
      psum += p;
    }
    if (std::abs(psum - 1.0) > 1e-6) {
      throw std::invalid_argument("kl_divergence: p_true not normalized along axis (lane sum " +
                                  std::to_string(psum) + ")");
    }
    for (std::size_t j = 0; j < lv.len; ++j) {
      const std::size_t ix = base + j * stride;
      const double p = pv[ix];
      if (p > 0.0) total += p * (std::log(p) - lp[ix]);
    }
  }
  const double inv_lanes = 1.0 / static_cast<double>(lv.lane_count());
  Tensor out = Tensor::scalar(total * inv_lanes);
  ensure_finite(out, "kl_divergence");
  if (want_grad({&log_p_pred})) {
    out.set_requires_grad(true);
    Impl li = log_p_pred.impl(), pi = p_true.impl(), oi = out.impl();
    GradTape::active()->record([li, pi, oi, inv_lanes] {
      if (oi->grad.empty() || !li->requires_grad) return;
      li->ensure_grad();
      const double g = oi->grad[0] * inv_lanes;
      for (std::size_t i = 0; i < li->grad.size(); ++i) li->grad[i] -= g * pi->value[i];
    });
  }
  return out;
}

Tensor nll_from_log_probs(const Tensor& log_p, const std::vector<int>& labels) {
  require_rank(log_p, 2, "nll_from_log_probs");
  const std::size_t b = log_p.rows(), c = log_p.cols();
  if (labels.size() != b) {
    throw std::invalid_argument("nll_from_log_probs: label count != row count");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::out_of_range("nll_from_log_probs: label out of range");
    }
    total -= log_p.data()[i * c + static_cast<std::size_t>(labels[i])];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(b));
  ensure_finite(out, "nll_from_log_probs");
  if (want_grad({&log_p})) {
    out.set_requires_grad(true);
    Impl li = log_p.impl(), oi = out.impl();
    GradTape::active()->record([li, oi, labels, b, c] {
      if (oi->grad.empty() || !li->requires_grad) return;
      li->ensure_grad();
      const double g = oi->grad[0] / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i) {
        li->grad[i * c + static_cast<std::size_t>(labels[i])] -= g;
      }
    });
  }
  return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  if (target.requires_grad()) {
    throw std::invalid_argument("mse_loss: target is a constant and must not require gradients");
  }
  const std::size_t n = pred.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.data()[i] - target.data()[i];
    total += d * d;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  ensure_finite(out, "mse_loss");
  if (want_grad({&pred})) {
    out.set_requires_grad(true);
    Impl pi = pred.impl(), ti = target.impl(), oi = out.impl();
    GradTape::active()->record([pi, ti, oi, n] {
      if (oi->grad.empty() || !pi->requires_grad) return;
      pi->ensure_grad();
      const double g = oi->grad[0] * 2.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) pi->grad[i] += g * (pi->value[i] - ti->value[i]);
    });
  }
  return out;
}

}  // namespace tosa
