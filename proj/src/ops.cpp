// Copyright 2026 The qatf Authors
// SPDX-License-Identifier: Apache-2.0

#include "qatf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "qatf/errors.hpp"
#include "qatf/kernels.hpp"

namespace qatf::ops {
namespace {

void require_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(fmt::format("{} expects a 2-D tensor, got {}", what, shape_str(t.shape())));
}

void sgemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
           bool accumulate) {
  kernels::active().sgemm(ta, tb, m, n, k, a, b, c, accumulate);
}

// Integer codes of a grid operand. Dividing a dequantized value by its scale
// lands within 2^-17 of the code, so rint recovers it exactly.
std::vector<float> grid_codes(const Tensor& t, float scale, float& amax) {
  std::vector<float> codes(t.size());
  amax = 0.0f;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    codes[i] = std::rint(t[i] / scale);
    amax = std::max(amax, std::fabs(codes[i]));
  }
  return codes;
}

// Exact sum_p a[i,p] * b[p,j] for integer-valued operands. FP32 is exact while
// every partial sum stays below 2^24; larger problems accumulate in FP64.
void exact_integer_gemm(bool tb, std::size_t m, std::size_t n, std::size_t k, const float* a, float amax,
                        const float* b, float bmax, float* c) {
  if (static_cast<double>(amax) * bmax * static_cast<double>(k) < 16777216.0) {
    sgemm(false, tb, m, n, k, a, b, c, false);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(a[i * k + p]) * (tb ? b[j * k + p] : b[p * n + j]);
      c[i * n + j] = static_cast<float>(acc);
    }
  }
}

Var matmul_impl(Var a, Var b, bool trans_b, const GridVar* grid_a, const GridVar* grid_b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_2d(av, "matmul");
  require_2d(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1);
  const std::size_t kb = trans_b ? bv.dim(1) : bv.dim(0);
  const std::size_t n = trans_b ? bv.dim(0) : bv.dim(1);
  if (k != kb) {
    throw DimensionError(fmt::format("matmul inner dimensions disagree: {} vs {}{}", shape_str(av.shape()),
                                     shape_str(bv.shape()), trans_b ? " (transposed)" : ""));
  }
  Tensor out({m, n});
  if (grid_a) {
    float amax = 0.0f, bmax = 0.0f;
    const auto ac = grid_codes(av, grid_a->scale, amax);
    const auto bc = grid_codes(bv, grid_b->scale, bmax);
    exact_integer_gemm(trans_b, m, n, k, ac.data(), amax, bc.data(), bmax, out.ptr());
    const float combined = grid_a->scale * grid_b->scale;
    for (float& x : out.data()) x = combined * x;
  } else {
    sgemm(false, trans_b, m, n, k, av.ptr(), bv.ptr(), out.ptr(), false);
  }
  return a.graph->record(std::move(out), {a, b}, [a, b, m, n, k, trans_b](Graph& g, const Tensor&, const Tensor& grad) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (g.requires_grad(a)) {
      // dA = G * op(B)^T
      sgemm(false, !trans_b, m, k, n, grad.ptr(), bv.ptr(), g.grad_buffer(a).ptr(), true);
    }
    if (g.requires_grad(b)) {
      if (trans_b) {
        sgemm(true, false, n, k, m, grad.ptr(), av.ptr(), g.grad_buffer(b).ptr(), true);  // G^T * A
      } else {
        sgemm(true, false, k, n, m, av.ptr(), grad.ptr(), g.grad_buffer(b).ptr(), true);  // A^T * G
      }
    }
  });
}

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw PreconditionError("operands belong to different graphs");
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  return matmul_impl(a, b, false, nullptr, nullptr);
}

Var matmul_nt(Var a, Var b) {
  require_same_graph(a, b);
  return matmul_impl(a, b, true, nullptr, nullptr);
}

Var grid_matmul(GridVar a, GridVar b, bool trans_b) {
  require_same_graph(a.var, b.var);
  return matmul_impl(a.var, b.var, trans_b, &a, &b);
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError(fmt::format("add shape mismatch: {} vs {}", shape_str(av.shape()), shape_str(bv.shape())));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor&, const Tensor& grad) {
    g.accumulate(a, grad);
    g.accumulate(b, grad);
  });
}

Var add_bias(Var x, Var bias) {
  require_same_graph(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t n = xv.cols();
  if (bv.size() != n) {
    throw DimensionError(fmt::format("bias {} does not match width of {}", shape_str(bv.shape()), shape_str(xv.shape())));
  }
  Tensor out = xv;
  const std::size_t rows = xv.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  }
  return x.graph->record(std::move(out), {x, bias}, [x, bias, rows, n](Graph& g, const Tensor&, const Tensor& grad) {
    g.accumulate(x, grad);
    if (g.requires_grad(bias)) {
      Tensor& db = g.grad_buffer(bias);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) db[c] += grad[r * n + c];
      }
    }
  });
}

Var scale(Var x, float factor) {
  Tensor out = x.value();
  for (float& v : out.data()) v *= factor;
  return x.graph->record(std::move(out), {x}, [x, factor](Graph& g, const Tensor&, const Tensor& grad) {
    if (!g.requires_grad(x)) return;
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * grad[i];
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return x.graph->record(std::move(out), {x}, [x](Graph& g, const Tensor&, const Tensor& grad) {
    if (!g.requires_grad(x)) return;
    const Tensor& xv = g.value(x);
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > 0.0f) dx[i] += grad[i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.graph->record(std::move(out), {x}, [x](Graph& g, const Tensor&, const Tensor& grad) {
    if (!g.requires_grad(x)) return;
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += grad[i];
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (float v : x.value().data()) total += v;
  return x.graph->record(Tensor::scalar(static_cast<float>(total)), {x}, [x](Graph& g, const Tensor&, const Tensor& grad) {
    if (!g.requires_grad(x)) return;
    Tensor& dx = g.grad_buffer(x);
    for (float& v : dx.data()) v += grad[0];
  });
}


void softmax_rows(const float* in, float* out, std::size_t rows, std::size_t len) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = in + r * len;
    float* dst = out + r * len;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, src[j]);
    float total = 0.0f;
    for (std::size_t j = 0; j < len; ++j) {
      dst[j] = std::exp(src[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < len; ++j) dst[j] /= total;
  }
}

Var softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) {
    throw DimensionError(fmt::format("softmax axis {} out of range for {}", axis, shape_str(xv.shape())));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  const std::size_t len = xv.dim(axis);
  Tensor out(xv.shape());
  if (inner == 1) {
    softmax_rows(xv.ptr(), out.ptr(), outer, len);
  } else {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
        float total = 0.0f;
        for (std::size_t j = 0; j < len; ++j) {
          const float e = std::exp(xv[base + j * inner] - mx);
          out[base + j * inner] = e;
          total += e;
        }
        for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
      }
    }
  }
  return x.graph->record(std::move(out), {x}, [x, outer, inner, len](Graph& g, const Tensor& y, const Tensor& grad) {
    if (!g.requires_grad(x)) return;
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        float dot = 0.0f;
        for (std::size_t j = 0; j < len; ++j) dot += grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          dx[idx] += y[idx] * (grad[idx] - dot);
        }
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, float eps) {
  require_same_graph(x, gain);
  require_same_graph(x, bias);
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols(), rows = xv.rows();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError(fmt::format("layer_norm width {} does not match gain {} / bias {}", n,
                                     shape_str(gain.value().shape()), shape_str(bias.value().shape())));
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape());
  std::vector<float> xhat(xv.size());
  std::vector<float> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xv.ptr() + r * n;
    float mean = 0.0f;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<float>(n);
    float var = 0.0f;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<float>(n);
    rstd[r] = 1.0f / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const float h = (row[c] - mean) * rstd[r];
      xhat[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return x.graph->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, const Tensor&,
                                                                              const Tensor& grad) {
        const Tensor& gv = g.value(gain);
        if (g.requires_grad(gain) || g.requires_grad(bias)) {
          Tensor& dg = g.grad_buffer(gain);
          Tensor& db = g.grad_buffer(bias);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
              dg[c] += grad[r * n + c] * xhat[r * n + c];
              db[c] += grad[r * n + c];
            }
          }
        }
        if (!g.requires_grad(x)) return;
        Tensor& dx = g.grad_buffer(x);
        const float inv_n = 1.0f / static_cast<float>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          float mean_d = 0.0f, mean_dh = 0.0f;
          for (std::size_t c = 0; c < n; ++c) {
            const float d = grad[r * n + c] * gv[c];
            mean_d += d;
            mean_dh += d * xhat[r * n + c];
          }
          mean_d *= inv_n;
          mean_dh *= inv_n;
          for (std::size_t c = 0; c < n; ++c) {
            const float d = grad[r * n + c] * gv[c];
            dx[r * n + c] += rstd[r] * (d - mean_d - xhat[r * n + c] * mean_dh);
          }
        }
      });
}

Var embedding(Var table, std::span<const std::int32_t> ids) {
  const Tensor& tv = table.value();
  require_2d(tv, "embedding");
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError(fmt::format("token id {} outside vocabulary of {}", ids[i], vocab));
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(ids[i]) * d, d, out.ptr() + i * d);
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return table.graph->record(std::move(out), {table}, [table, d, idv = std::move(idv)](Graph& g, const Tensor&,
                                                                                      const Tensor& grad) {
    Tensor& dt = g.grad_buffer(table);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      float* dst = dt.ptr() + static_cast<std::size_t>(idv[i]) * d;
      const float* src = grad.ptr() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Var dropout(Var x, float rate, std::mt19937_64& rng) {
  if (rate <= 0.0f) return x;
  if (rate >= 1.0f) throw DomainError("dropout rate must be below 1");
  const Tensor& xv = x.value();
  std::bernoulli_distribution keep(1.0 - rate);
  const float inv = 1.0f / (1.0f - rate);
  std::vector<float> mask(xv.size());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = keep(rng) ? inv : 0.0f;
    out[i] = xv[i] * mask[i];
  }
  return x.graph->record(std::move(out), {x}, [x, mask = std::move(mask)](Graph& g, const Tensor&, const Tensor& grad) {
    Tensor& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += grad[i] * mask[i];
  });
}

Var cross_entropy(Var logits, std::span<const std::int32_t> targets, std::int32_t pad_id) {
  const Tensor& lv = logits.value();
  const std::size_t vocab = lv.cols();
  if (lv.rows() != targets.size()) {
    throw DimensionError(fmt::format("cross_entropy: {} logit rows for {} targets", lv.rows(), targets.size()));
  }
  std::size_t count = 0;
  for (std::int32_t t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError(fmt::format("target id {} outside vocabulary of {}", t, vocab));
    }
    if (t != pad_id) ++count;
  }
  if (count == 0) throw PreconditionError("no non-pad targets");
  // Softmax rows are kept for the backward pass.
  std::vector<float> probs(lv.size(), 0.0f);
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] == pad_id) continue;
    const float* row = lv.ptr() + r * vocab;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t c = 0; c < vocab; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(static_cast<double>(row[c] - mx));
    const double log_z = std::log(z) + mx;
    total += log_z - row[targets[r]];
    for (std::size_t c = 0; c < vocab; ++c) probs[r * vocab + c] = static_cast<float>(std::exp(row[c] - log_z));
  }
  const float loss = static_cast<float>(total / static_cast<double>(count));
  std::vector<std::int32_t> tv(targets.begin(), targets.end());
  return logits.graph->record(
      Tensor::scalar(loss), {logits},
      [logits, vocab, count, pad_id, tv = std::move(tv), probs = std::move(probs)](Graph& g, const Tensor&,
                                                                                 const Tensor& grad) {
        Tensor& dl = g.grad_buffer(logits);
        const float w = grad[0] / static_cast<float>(count);
        for (std::size_t r = 0; r < tv.size(); ++r) {
          if (tv[r] == pad_id) continue;
          for (std::size_t c = 0; c < vocab; ++c) dl[r * vocab + c] += w * probs[r * vocab + c];
          dl[r * vocab + static_cast<std::size_t>(tv[r])] -= w;
        }
      });
}

float attention_logit_scale(std::size_t head_dim) { return 1.0f / std::sqrt(static_cast<float>(head_dim)); }

namespace {

void check_attention_operand(const Tensor& t, std::size_t rows, std::size_t cols, const char* what) {
  if (t.rank() != 2 || t.dim(0) != rows || t.dim(1) != cols) {
    throw DimensionError(fmt::format("attention {} has shape {}, expected [{}x{}]", what, shape_str(t.shape()), rows, cols));
  }
}

// Copies head h of batch b out of a [batch*len x d_model] matrix into [len x dh].
void gather_head(const float* src, std::size_t b, std::size_t h, std::size_t len, std::size_t d_model, std::size_t dh,
                 float* dst) {
  for (std::size_t t = 0; t < len; ++t) std::copy_n(src + (b * len + t) * d_model + h * dh, dh, dst + t * dh);
}

void scatter_add_head(const float* src, std::size_t b, std::size_t h, std::size_t len, std::size_t d_model,
                      std::size_t dh, float* dst) {
  for (std::size_t t = 0; t < len; ++t) {
    float* row = dst + (b * len + t) * d_model + h * dh;
    for (std::size_t d = 0; d < dh; ++d) row[d] += src[t * dh + d];
  }
}

Var scores_impl(Var q, Var k, const AttentionDims& dims, float scale, const Tensor* mask, const GridVar* gq,
                const GridVar* gk) {
  require_same_graph(q, k);
  const std::size_t B = dims.batch, H = dims.heads, Tq = dims.query_len, Tk = dims.key_len, D = dims.d_model;
  if (H == 0 || D % H != 0) throw DimensionError(fmt::format("d_model {} not divisible by {} heads", D, H));
  const std::size_t dh = dims.head_dim();
  check_attention_operand(q.value(), B * Tq, D, "query");
  check_attention_operand(k.value(), B * Tk, D, "key");
  if (mask && mask->size() != B * Tq * Tk) {
    throw DimensionError(fmt::format("attention mask {} does not match [{}x{}x{}]", shape_str(mask->shape()), B, Tq, Tk));
  }
  std::vector<float> qsrc, ksrc;
  const float* qp = q.value().ptr();
  const float* kp = k.value().ptr();
  float qmax = 0.0f, kmax = 0.0f;
  float out_scale = scale;
  if (gq) {
    qsrc = grid_codes(q.value(), gq->scale, qmax);
    ksrc = grid_codes(k.value(), gk->scale, kmax);
    qp = qsrc.data();
    kp = ksrc.data();
    out_scale = (gq->scale * gk->scale) * scale;
  }
  Tensor out({B * H * Tq, Tk});
  std::vector<float> qh(Tq * dh), kh(Tk * dh), sh(Tq * Tk);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      gather_head(qp, b, h, Tq, D, dh, qh.data());
      gather_head(kp, b, h, Tk, D, dh, kh.data());
      if (gq) {
        exact_integer_gemm(true, Tq, Tk, dh, qh.data(), qmax, kh.data(), kmax, sh.data());
      } else {
        sgemm(false, true, Tq, Tk, dh, qh.data(), kh.data(), sh.data(), false);
      }
      float* dst = out.ptr() + (b * H + h) * Tq * Tk;
      for (std::size_t i = 0; i < Tq * Tk; ++i) {
        dst[i] = out_scale * sh[i];
        if (mask) dst[i] += (*mask)[b * Tq * Tk + i];
      }
    }
  }
  return q.graph->record(std::move(out), {q, k}, [q, k, dims, scale](Graph& g, const Tensor&, const Tensor& grad) {
    const std::size_t B = dims.batch, H = dims.heads, Tq = dims.query_len, Tk = dims.key_len, D = dims.d_model;
    const std::size_t dh = dims.head_dim();
    std::vector<float> qh(Tq * dh), kh(Tk * dh), gh(Tq * Tk), dq(Tq * dh), dk(Tk * dh);
    const bool need_q = g.requires_grad(q), need_k = g.requires_grad(k);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        gather_head(g.value(q).ptr(), b, h, Tq, D, dh, qh.data());
        gather_head(g.value(k).ptr(), b, h, Tk, D, dh, kh.data());
        const float* src = grad.ptr() + (b * H + h) * Tq * Tk;
        for (std::size_t i = 0; i < Tq * Tk; ++i) gh[i] = src[i] * scale;
        if (need_q) {
          sgemm(false, false, Tq, dh, Tk, gh.data(), kh.data(), dq.data(), false);
          scatter_add_head(dq.data(), b, h, Tq, D, dh, g.grad_buffer(q).ptr());
        }
        if (need_k) {
          sgemm(true, false, Tk, dh, Tq, gh.data(), qh.data(), dk.data(), false);
          scatter_add_head(dk.data(), b, h, Tk, D, dh, g.grad_buffer(k).ptr());
        }
      }
    }
  });
}

Var context_impl(Var w, Var v, const AttentionDims& dims, const GridVar* gw, const GridVar* gv) {
  require_same_graph(w, v);
  const std::size_t B = dims.batch, H = dims.heads, Tq = dims.query_len, Tk = dims.key_len, D = dims.d_model;
  if (H == 0 || D % H != 0) throw DimensionError(fmt::format("d_model {} not divisible by {} heads", D, H));
  const std::size_t dh = dims.head_dim();
  check_attention_operand(w.value(), B * H * Tq, Tk, "weights");
  check_attention_operand(v.value(), B * Tk, D, "value");
  std::vector<float> wsrc, vsrc;
  const float* wp = w.value().ptr();
  const float* vp = v.value().ptr();
  float wmax = 0.0f, vmax = 0.0f;
  if (gw) {
    wsrc = grid_codes(w.value(), gw->scale, wmax);
    vsrc = grid_codes(v.value(), gv->scale, vmax);
    wp = wsrc.data();
    vp = vsrc.data();
  }
  Tensor out({B * Tq, D}, 0.0f);
  std::vector<float> vh(Tk * dh), oh(Tq * dh);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      gather_head(vp, b, h, Tk, D, dh, vh.data());
      const float* wh = wp + (b * H + h) * Tq * Tk;
      if (gw) {
        exact_integer_gemm(false, Tq, dh, Tk, wh, wmax, vh.data(), vmax, oh.data());
        const float combined = gw->scale * gv->scale;
        for (float& x : oh) x = combined * x;
      } else {
        sgemm(false, false, Tq, dh, Tk, wh, vh.data(), oh.data(), false);
      }
      scatter_add_head(oh.data(), b, h, Tq, D, dh, out.ptr());
    }
  }
  return w.graph->record(std::move(out), {w, v}, [w, v, dims](Graph& g, const Tensor&, const Tensor& grad) {
    const std::size_t B = dims.batch, H = dims.heads, Tq = dims.query_len, Tk = dims.key_len, D = dims.d_model;
    const std::size_t dh = dims.head_dim();
    std::vector<float> vh(Tk * dh), gh(Tq * dh), dv(Tk * dh);
    const bool need_w = g.requires_grad(w), need_v = g.requires_grad(v);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        gather_head(g.value(v).ptr(), b, h, Tk, D, dh, vh.data());
        gather_head(grad.ptr(), b, h, Tq, D, dh, gh.data());
        const std::size_t off = (b * H + h) * Tq * Tk;
        if (need_w) sgemm(false, true, Tq, Tk, dh, gh.data(), vh.data(), g.grad_buffer(w).ptr() + off, true);
        if (need_v) {
          sgemm(true, false, Tk, dh, Tq, g.value(w).ptr() + off, gh.data(), dv.data(), false);
          scatter_add_head(dv.data(), b, h, Tk, D, dh, g.grad_buffer(v).ptr());
        }
      }
    }
  });
}

}  // namespace

Var attention_scores(Var q, Var k, const AttentionDims& dims, float scale, const Tensor* mask) {
  return scores_impl(q, k, dims, scale, mask, nullptr, nullptr);
}

Var attention_scores(GridVar q, GridVar k, const AttentionDims& dims, float scale, const Tensor* mask) {
  return scores_impl(q.var, k.var, dims, scale, mask, &q, &k);
}

Var attention_context(Var weights, Var v, const AttentionDims& dims) {
  return context_impl(weights, v, dims, nullptr, nullptr);
}

Var attention_context(GridVar weights, GridVar v, const AttentionDims& dims) {
  return context_impl(weights.var, v.var, dims, &weights, &v);
}

}  // namespace qatf::ops
