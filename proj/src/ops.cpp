#include "gradattn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gradattn/errors.hpp"
#include "kernels.hpp"

namespace gradattn {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void axpy(std::vector<double>& dst, const std::vector<double>& src, double c = 1.0) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += c * src[i];
}

Tensor binary_add(const char* op, const Tensor& a, const Tensor& b) {
  require_same_shape(op, a, b);
  Tensor out = Tensor::zeros(a.shape());
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return finish_op(op, {a, b}, std::move(out),
                   [ai, bi](BackwardCtx& ctx, const std::vector<double>& dy) {
                     axpy(ctx.buf(ai), dy);
                     axpy(ctx.buf(bi), dy);
                   });
}

}  // namespace

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(rank));
  }
  return a;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_add("add", a, b); }
Tensor skip_add(const Tensor& a, const Tensor& b) { return binary_add("skip_add", a, b); }

Tensor add_broadcast(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.empty() || bs.size() > as.size() ||
      !std::equal(bs.begin(), bs.end(), as.end() - static_cast<long>(bs.size()))) {
    throw std::invalid_argument("add_broadcast: " + shape_str(bs) +
                                " is not a trailing suffix of " + shape_str(as));
  }
  const int64_t inner = shape_numel(bs);
  const int64_t outer = a.numel() / inner;
  Tensor out = Tensor::zeros(as);
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (int64_t r = 0; r < outer; ++r) {
    const size_t off = static_cast<size_t>(r * inner);
    for (int64_t i = 0; i < inner; ++i) od[off + static_cast<size_t>(i)] = ad[off + static_cast<size_t>(i)] + bd[static_cast<size_t>(i)];
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return finish_op("add_broadcast", {a, b}, std::move(out),
                   [ai, bi, outer, inner](BackwardCtx& ctx, const std::vector<double>& dy) {
                     axpy(ctx.buf(ai), dy);
                     auto& db = ctx.buf(bi);
                     for (int64_t r = 0; r < outer; ++r) {
                       const size_t off = static_cast<size_t>(r * inner);
                       for (int64_t i = 0; i < inner; ++i) db[static_cast<size_t>(i)] += dy[off + static_cast<size_t>(i)];
                     }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return finish_op("mul", {a, b}, std::move(out),
                   [ai, bi](BackwardCtx& ctx, const std::vector<double>& dy) {
                     auto& da = ctx.buf(ai);
                     auto& db = ctx.buf(bi);
                     for (size_t i = 0; i < dy.size(); ++i) {
                       da[i] += dy[i] * bi->data[i];
                       db[i] += dy[i] * ai->data[i];
                     }
                   });
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& ad = a.data();
  auto& od = out.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = c * ad[i];
  auto ai = a.impl();
  return finish_op("scale", {a}, std::move(out),
                   [ai, c](BackwardCtx& ctx, const std::vector<double>& dy) {
                     axpy(ctx.buf(ai), dy, c);
                   });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  auto ai = a.impl();
  return finish_op("sum", {a}, std::move(out),
                   [ai](BackwardCtx& ctx, const std::vector<double>& dy) {
                     auto& da = ctx.buf(ai);
                     for (double& v : da) v += dy[0];
                   });
}

Tensor mean_axis(const Tensor& a, int axis) {
  const int ax = normalize_axis(axis, a.rank());
  const Shape& as = a.shape();
  Shape os;
  for (int i = 0; i < a.rank(); ++i) {
    if (i != ax) os.push_back(as[static_cast<size_t>(i)]);
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= as[static_cast<size_t>(i)];
  for (int i = ax + 1; i < a.rank(); ++i) inner *= as[static_cast<size_t>(i)];
  const int64_t n = as[static_cast<size_t>(ax)];

  Tensor out = Tensor::zeros(os);
  const auto& ad = a.data();
  auto& od = out.data();
  const double inv = 1.0 / static_cast<double>(n);
  for (int64_t r = 0; r < outer; ++r) {
    for (int64_t i = 0; i < inner; ++i) {
      double s = 0.0;
      for (int64_t k = 0; k < n; ++k) s += ad[static_cast<size_t>((r * n + k) * inner + i)];
      od[static_cast<size_t>(r * inner + i)] = s * inv;
    }
  }
  auto ai = a.impl();
  return finish_op("mean_axis", {a}, std::move(out),
                   [ai, outer, inner, n, inv](BackwardCtx& ctx, const std::vector<double>& dy) {
                     auto& da = ctx.buf(ai);
                     for (int64_t r = 0; r < outer; ++r) {
                       for (int64_t k = 0; k < n; ++k) {
                         for (int64_t i = 0; i < inner; ++i) {
                           da[static_cast<size_t>((r * n + k) * inner + i)] +=
                               dy[static_cast<size_t>(r * inner + i)] * inv;
                         }
                       }
                     }
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw std::invalid_argument("matmul: operands need rank >= 2, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  }
  if (a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    throw std::invalid_argument("matmul: batch dims differ, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const int r = a.rank();
  const int64_t m = a.dim(r - 2), k = a.dim(r - 1);
  const int64_t k2 = b.dim(r - 2), n = b.dim(r - 1);
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  int64_t batch = 1;
  Shape os(a.shape().begin(), a.shape().end() - 2);
  for (int64_t d : os) batch *= d;
  os.push_back(m);
  os.push_back(n);

  Tensor out = Tensor::zeros(os);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  // Parallel across independent batch items; the nested gemm pragmas stay
  // inactive inside this region, so each item is one sequential gemm.
#pragma omp parallel for schedule(static)
  for (int64_t t = 0; t < batch; ++t) {
    detail::gemm_nn(ad + t * m * k, bd + t * k * n, od + t * m * n, m, k, n, false);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return finish_op("matmul", {a, b}, std::move(out),
                   [ai, bi, batch, m, k, n](BackwardCtx& ctx, const std::vector<double>& dy) {
                     auto& da = ctx.buf(ai);
                     auto& db = ctx.buf(bi);
#pragma omp parallel for schedule(static)
                     for (int64_t t = 0; t < batch; ++t) {
                       const double* g = dy.data() + t * m * n;
                       // dA = dY * B^T ; dB = A^T * dY
                       detail::gemm_nt(g, bi->data.data() + t * k * n, da.data() + t * m * k, m,
                                       n, k, true);
                       detail::gemm_tn(ai->data.data() + t * m * k, g, db.data() + t * k * n, m,
                                       k, n, true);
                     }
                   });
}

namespace {
std::vector<int64_t> row_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}
}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& dims) {
  const int r = a.rank();
  if (static_cast<int>(dims.size()) != r) {
    throw std::invalid_argument("permute: got " + std::to_string(dims.size()) +
                                " dims for rank " + std::to_string(r));
  }
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int d : dims) {
    if (d < 0 || d >= r || seen[static_cast<size_t>(d)]) {
      throw std::invalid_argument("permute: dims is not a permutation of 0.." +
                                  std::to_string(r - 1));
    }
    seen[static_cast<size_t>(d)] = true;
  }
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = a.dim(dims[static_cast<size_t>(i)]);

  // out[j] = in[src[j]] where src maps output linear indices to input ones.
  const auto in_st = row_strides(a.shape());
  const auto out_st = row_strides(os);
  const int64_t total = a.numel();
  auto src = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(total));
  Tensor out = Tensor::zeros(os);
  const auto& ad = a.data();
  auto& od = out.data();
  for (int64_t j = 0; j < total; ++j) {
    int64_t rem = j, off = 0;
    for (int i = 0; i < r; ++i) {
      const int64_t c = rem / out_st[static_cast<size_t>(i)];
      rem -= c * out_st[static_cast<size_t>(i)];
      off += c * in_st[static_cast<size_t>(dims[static_cast<size_t>(i)])];
    }
    (*src)[static_cast<size_t>(j)] = off;
    od[static_cast<size_t>(j)] = ad[static_cast<size_t>(off)];
  }
  auto ai = a.impl();
  return finish_op("permute", {a}, std::move(out),
                   [ai, src](BackwardCtx& ctx, const std::vector<double>& dy) {
                     auto& da = ctx.buf(ai);
                     for (size_t j = 0; j < dy.size(); ++j) da[static_cast<size_t>((*src)[j])] += dy[j];
                   });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape) + " (numel mismatch)");
  }
  Tensor out = Tensor::from_data(shape, a.data());
  auto ai = a.impl();
  return finish_op("reshape", {a}, std::move(out),
                   [ai](BackwardCtx& ctx, const std::vector<double>& dy) {
                     axpy(ctx.buf(ai), dy);
                   });
}

Tensor stack_tokens(const std::vector<Tensor>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("stack_tokens: empty token list");
  const Shape& s0 = tokens[0].shape();
  if (s0.size() != 2) {
    throw std::invalid_argument("stack_tokens: tokens must be rank-2 [B,d], got " +
                                shape_str(s0));
  }
  for (const Tensor& t : tokens) {
    if (t.shape() != s0) {
      throw std::invalid_argument("stack_tokens: token shape " + shape_str(t.shape()) +
                                  " differs from " + shape_str(s0));
    }
  }
  const int64_t B = s0[0], d = s0[1];
  const int64_t T = static_cast<int64_t>(tokens.size());
  Tensor out = Tensor::zeros({B, T, d});
  auto& od = out.data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t t = 0; t < T; ++t) {
      const auto& td = tokens[static_cast<size_t>(t)].data();
      std::copy_n(td.begin() + b * d, d, od.begin() + (b * T + t) * d);
    }
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  impls.reserve(tokens.size());
  for (const Tensor& t : tokens) impls.push_back(t.impl());
  return finish_op("stack_tokens", tokens, std::move(out),
                   [impls, B, T, d](BackwardCtx& ctx, const std::vector<double>& dy) {
                     for (int64_t t = 0; t < T; ++t) {
                       auto& dt = ctx.buf(impls[static_cast<size_t>(t)]);
                       for (int64_t b = 0; b < B; ++b) {
                         const double* g = dy.data() + (b * T + t) * d;
                         double* dst = dt.data() + b * d;
                         for (int64_t i = 0; i < d; ++i) dst[i] += g[i];
                       }
                     }
                   });
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& ad = a.data();
  auto& od = out.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] > 0.0 ? ad[i] : 0.0;
  auto ai = a.impl();
  return finish_op("relu", {a}, std::move(out),
                   [ai](BackwardCtx& ctx, const std::vector<double>& dy) {
                     auto& da = ctx.buf(ai);
                     for (size_t i = 0; i < dy.size(); ++i) {
                       if (ai->data[i] > 0.0) da[i] += dy[i];
                     }
                   });
}

Tensor softmax(const Tensor& a, int axis) {
  if (!a.all_finite()) throw NumericError("softmax: input contains non-finite values");
  const int ax = normalize_axis(axis, a.rank());
  const Shape& as = a.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= as[static_cast<size_t>(i)];
  for (int i = ax + 1; i < a.rank(); ++i) inner *= as[static_cast<size_t>(i)];
  const int64_t n = as[static_cast<size_t>(ax)];

  Tensor out = Tensor::zeros(as);
  const auto& ad = a.data();
  auto& od = out.data();
  for (int64_t r = 0; r < outer; ++r) {
    for (int64_t i = 0; i < inner; ++i) {
      const auto idx = [&](int64_t k) { return static_cast<size_t>((r * n + k) * inner + i); };
      double mx = ad[idx(0)];
      for (int64_t k = 1; k < n; ++k) mx = std::max(mx, ad[idx(k)]);
      double z = 0.0;
      for (int64_t k = 0; k < n; ++k) {
        const double e = std::exp(ad[idx(k)] - mx);
        od[idx(k)] = e;
        z += e;
      }
      const double invz = 1.0 / z;
      for (int64_t k = 0; k < n; ++k) od[idx(k)] *= invz;
    }
  }
  auto ai = a.impl();
  auto oi = out.impl();
  return finish_op("softmax", {a}, std::move(out),
                   [ai, oi, outer, inner, n](BackwardCtx& ctx, const std::vector<double>& dy) {
                     auto& da = ctx.buf(ai);
                     const auto& y = oi->data;
                     for (int64_t r = 0; r < outer; ++r) {
                       for (int64_t i = 0; i < inner; ++i) {
                         const auto idx = [&](int64_t k) {
                           return static_cast<size_t>((r * n + k) * inner + i);
                         };
                         double dot = 0.0;
                         for (int64_t k = 0; k < n; ++k) dot += dy[idx(k)] * y[idx(k)];
                         for (int64_t k = 0; k < n; ++k) da[idx(k)] += y[idx(k)] * (dy[idx(k)] - dot);
                       }
                     }
                   });
}

}  // namespace gradattn
