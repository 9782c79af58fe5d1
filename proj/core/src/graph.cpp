#include "tinydistill/graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "tinydistill/threadpool.hpp"

namespace tinydistill {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;

// Fixed work-partition sizes. Chunking is independent of the worker count so
// results are bitwise identical no matter how many threads execute them.
constexpr int kRowChunk = 128;
constexpr int kColChunk = 128;

std::size_t chunks_for(std::int64_t n, int chunk) {
  return static_cast<std::size_t>((n + chunk - 1) / chunk);
}

// Shared rotary-angle table: cos at [pos*half + i], sin at the same index in
// the second half. Cached per (seq_len, head_dim, base); angles are computed
// in double regardless of the working precision.
std::shared_ptr<const std::vector<double>> rope_table(int seq_len, int head_dim, double base) {
  struct Key {
    int len, hd;
    double base;
    bool operator<(const Key& o) const {
      return std::tie(len, hd, base) < std::tie(o.len, o.hd, o.base);
    }
  };
  static std::map<Key, std::shared_ptr<const std::vector<double>>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lk(mu);
  auto it = cache.find({seq_len, head_dim, base});
  if (it != cache.end()) return it->second;
  const int half = head_dim / 2;
  auto tab = std::make_shared<std::vector<double>>(static_cast<std::size_t>(2 * seq_len * half));
  for (int p = 0; p < seq_len; ++p) {
    for (int i = 0; i < half; ++i) {
      double angle = p * std::pow(base, -2.0 * i / head_dim);
      (*tab)[static_cast<std::size_t>(p * half + i)] = std::cos(angle);
      (*tab)[static_cast<std::size_t>((seq_len + p) * half + i)] = std::sin(angle);
    }
  }
  cache.insert({{seq_len, head_dim, base}, tab});
  return tab;
}

template <typename T>
bool needs_grad(std::initializer_list<TensorPtr<T>> inputs) {
  for (const auto& t : inputs)
    if (t && t->requires_grad) return true;
  return false;
}

constexpr double kProbFloor = 1e-9;  // clamp inside log for q (and grad of p)

}  // namespace

// ===== tape plumbing =====

template <typename T>
TensorPtr<T> Graph<T>::result(const char* op, std::vector<int> shape,
                              std::initializer_list<TensorPtr<T>> inputs) {
  for (const auto& t : inputs)
    if (!t) throw UsageError(std::string(op) + ": null input tensor");
  auto out = make_tensor<T>(std::move(shape));
  out->requires_grad = recording_ && needs_grad(inputs);
  return out;
}

template <typename T>
void Graph<T>::record(const char* op, const TensorPtr<T>& out, std::function<void()> fn) {
  if (!out->requires_grad) return;
  nodes_.push_back(Node{op, out, nullptr, std::move(fn)});
  backward_taken_ = false;
}

template <typename T>
void Graph<T>::backward(const TensorPtr<T>& loss) {
  if (!loss || loss->numel() != 1) throw UsageError("backward: loss must be a scalar tensor");
  if (backward_taken_)
    throw UsageError("backward: tape already consumed; record a new forward pass first");
  std::size_t start = nodes_.size();
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].output == loss) {
      start = i;
      break;
    }
  }
  if (start == nodes_.size())
    throw UsageError("backward: loss was not produced on this tape (no recorded dependency)");
  loss->ensure_grad();
  loss->grad[0] = T(1);
  for (std::size_t i = start + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    // A branch that never reached the loss carries no gradient; skip it.
    if (!n.output->has_grad() && !(n.aux && n.aux->has_grad())) continue;
    n.grad_fn();
  }
  backward_taken_ = true;
}

// ===== elementwise / structural =====

template <typename T>
TensorPtr<T> Graph<T>::add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (!a || !b || a->shape != b->shape)
    throw ShapeError("add: shape mismatch " + shape_str(a ? a->shape : std::vector<int>{}) +
                     " vs " + shape_str(b ? b->shape : std::vector<int>{}));
  auto out = result("add", a->shape, {a, b});
  const std::size_t n = a->data.size();
  for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
  record("add", out, [a, b, out] {
    const std::size_t n = out->grad.size();
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
    }
  });
  return out;
}

template <typename T>
TensorPtr<T> Graph<T>::mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (!a || !b || a->shape != b->shape) throw ShapeError("mul: shape mismatch");
  auto out = result("mul", a->shape, {a, b});
  const std::size_t n = a->data.size();
  for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
  record("mul", out, [a, b, out] {
    const std::size_t n = out->grad.size();
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->data[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->data[i];
    }
  });
  return out;
}

template <typename T>
TensorPtr<T> Graph<T>::scale(const TensorPtr<T>& x, T s) {
  if (!x) throw UsageError("scale: null input");
  auto out = result("scale", x->shape, {x});
  const std::size_t n = x->data.size();
  for (std::size_t i = 0; i < n; ++i) out->data[i] = x->data[i] * s;
  record("scale", out, [x, out, s] {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const std::size_t n = out->grad.size();
    for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * s;
  });
  return out;
}

template <typename T>
TensorPtr<T> Graph<T>::silu(const TensorPtr<T>& x) {
  if (!x) throw UsageError("silu: null input");
  auto out = result("silu", x->shape, {x});
  const std::size_t n = x->data.size();
  for (std::size_t i = 0; i < n; ++i) {
    double v = static_cast<double>(x->data[i]);
    out->data[i] = static_cast<T>(v / (1.0 + std::exp(-v)));
  }
  record("silu", out, [x, out] {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const std::size_t n = out->grad.size();
    for (std::size_t i = 0; i < n; ++i) {
      double v = static_cast<double>(x->data[i]);
      double sig = 1.0 / (1.0 + std::exp(-v));
      x->grad[i] += out->grad[i] * static_cast<T>(sig * (1.0 + v * (1.0 - sig)));
    }
  });
  return out;
}

template <typename T>
TensorPtr<T> Graph<T>::gather_rows(const TensorPtr<T>& x, std::vector<int> rows) {
  if (!x || x->ndim() < 1) throw ShapeError("gather_rows: input must have at least one axis");
  const int n_rows = x->dim(0);
  for (int r : rows)
    if (r < 0 || r >= n_rows) throw DomainError("gather_rows: row index out of range");
  const std::int64_t stride = x->numel() / std::max(1, n_rows);
  std::vector<int> shape = x->shape;
  shape[0] = static_cast<int>(rows.size());
  auto out = result("gather_rows", std::move(shape), {x});
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(x->data.data() + rows[r] * stride, stride, out->data.data() + r * stride);
  record("gather_rows", out, [x, out, rows = std::move(rows), stride] {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const T* g = out->grad.data() + r * stride;
      T* dst = x->grad.data() + rows[r] * stride;
      for (std::int64_t i = 0; i < stride; ++i) dst[i] += g[i];
    }
  });
  return out;
}

// ===== dense algebra =====

template <typename T>
TensorPtr<T> Graph<T>::matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (!a || !b || a->ndim() != 2 || b->ndim() != 2 || a->dim(1) != b->dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a ? a->shape : std::vector<int>{}) +
                     " x " + shape_str(b ? b->shape : std::vector<int>{}));
  const int m = a->dim(0), k = a->dim(1), n = b->dim(1);
  auto out = result("matmul", {m, n}, {a, b});
  CMap<T> am(a->data.data(), m, k);
  CMap<T> bm(b->data.data(), k, n);
  MMap<T> cm(out->data.data(), m, n);
  ThreadPool::instance().parallel_for(chunks_for(m, kRowChunk), [&](std::size_t c) {
    const int r0 = static_cast<int>(c) * kRowChunk;
    const int r = std::min(kRowChunk, m - r0);
    cm.middleRows(r0, r).noalias() = am.middleRows(r0, r) * bm;
  });
  record("matmul", out, [a, b, out, m, k, n] {
    CMap<T> am(a->data.data(), m, k);
    CMap<T> bm(b->data.data(), k, n);
    CMap<T> gm(out->grad.data(), m, n);
    if (a->requires_grad) {
      a->ensure_grad();
      MMap<T> ga(a->grad.data(), m, k);
      ThreadPool::instance().parallel_for(chunks_for(m, kRowChunk), [&](std::size_t c) {
        const int r0 = static_cast<int>(c) * kRowChunk;
        const int r = std::min(kRowChunk, m - r0);
        ga.middleRows(r0, r).noalias() += gm.middleRows(r0, r) * bm.transpose();
      });
    }
    if (b->requires_grad) {
      b->ensure_grad();
      MMap<T> gb(b->grad.data(), k, n);
      ThreadPool::instance().parallel_for(chunks_for(n, kColChunk), [&](std::size_t c) {
        const int c0 = static_cast<int>(c) * kColChunk;
        const int cw = std::min(kColChunk, n - c0);
        gb.middleCols(c0, cw).noalias() += am.transpose() * gm.middleCols(c0, cw);
      });
    }
  });
  return out;
}

template <typename T>
TensorPtr<T> Graph<T>::embedding(const TensorPtr<T>& table, std::vector<int> ids) {
  if (!table || table->ndim() != 2) throw ShapeError("embedding: table must be 2-D");
  if (ids.empty()) throw UsageError("embedding: empty id list");
  const int v = table->dim(0), d = table->dim(1);
  for (int id : ids)
    if (id < 0 || id >= v) throw DomainError("embedding: id out of vocabulary range");
  auto out = result("embedding", {static_cast<int>(ids.size()), d}, {table});
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(table->data.data() + static_cast<std::int64_t>(ids[r]) * d, d,
                out->data.data() + static_cast<std::int64_t>(r) * d);
  record("embedding", out, [table, out, ids = std::move(ids), d] {
    if (!table->requires_grad) return;
    table->ensure_grad();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const T* g = out->grad.data() + static_cast<std::int64_t>(r) * d;
      T* dst = table->grad.data() + static_cast<std::int64_t>(ids[r]) * d;
      for (int i = 0; i < d; ++i) dst[i] += g[i];
    }
  });
  return out;
}

// ===== normalization / position =====

template <typename T>
TensorPtr<T> Graph<T>::rms_norm(const TensorPtr<T>& x, const TensorPtr<T>& gain) {
  if (!x || x->ndim() < 1) throw ShapeError("rms_norm: input must have at least one axis");
  const int d = x->dim(x->ndim() - 1);
  if (!gain || gain->numel() != d)
    throw ShapeError("rms_norm: gain must match the trailing axis of the input");
  constexpr double kEps = 1e-5;
  const std::int64_t rows = x->numel() / d;
  auto out = result("rms_norm", x->shape, {x, gain});
  // Save 1/rms per row for the backward pass.
  auto inv_rms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x->data.data() + r * d;
    double ss = 0.0;
    for (int i = 0; i < d; ++i) ss += static_cast<double>(xr[i]) * xr[i];
    const double inv = 1.0 / std::sqrt(ss / d + kEps);
    (*inv_rms)[static_cast<std::size_t>(r)] = inv;
    T* yr = out->data.data() + r * d;
    for (int i = 0; i < d; ++i)
      yr[i] = static_cast<T>(static_cast<double>(xr[i]) * inv) * gain->data[static_cast<std::size_t>(i)];
  }
  record("rms_norm", out, [x, gain, out, inv_rms, rows, d] {
    if (x->requires_grad) x->ensure_grad();
    if (gain->requires_grad) gain->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xr = x->data.data() + r * d;
      const T* gr = out->grad.data() + r * d;
      const double inv = (*inv_rms)[static_cast<std::size_t>(r)];
      if (gain->requires_grad) {
        for (int i = 0; i < d; ++i)
          gain->grad[static_cast<std::size_t>(i)] +=
              gr[i] * static_cast<T>(static_cast<double>(xr[i]) * inv);
      }
      if (x->requires_grad) {
        double s = 0.0;  // sum of dy*g*x over the row
        for (int i = 0; i < d; ++i)
          s += static_cast<double>(gr[i]) * gain->data[static_cast<std::size_t>(i)] * xr[i];
        const double coef = s * inv * inv * inv / d;
        T* dx = x->grad.data() + r * d;
        for (int i = 0; i < d; ++i)
          dx[i] += static_cast<T>(static_cast<double>(gr[i]) *
                                      gain->data[static_cast<std::size_t>(i)] * inv -
                                  xr[i] * coef);
      }
    }
  });
  return out;
}

template <typename T>
TensorPtr<T> Graph<T>::rope(const TensorPtr<T>& x, int n_heads, int seq_len, double base) {
  if (!x || x->ndim() != 2) throw ShapeError("rope: input must be [rows, d_model]");
  const int rows = x->dim(0), d = x->dim(1);
  if (n_heads <= 0 || d % n_heads != 0) throw ShapeError("rope: d_model not divisible by heads");
  const int hd = d / n_heads;
  if (hd % 2 != 0) throw ShapeError("rope: head dimension must be even");
  if (seq_len <= 0 || rows % seq_len != 0)
    throw ShapeError("rope: rows must be a multiple of seq_len");
  auto tab = rope_table(seq_len, hd, base);
  const int half = hd / 2;
  auto out = result("rope", x->shape, {x});
  const double* cs = tab->data();
  const double* sn = tab->data() + static_cast<std::size_t>(seq_len) * half;
  for (int r = 0; r < rows; ++r) {
    const int pos = r % seq_len;
    const T* xr = x->data.data() + static_cast<std::int64_t>(r) * d;
    T* yr = out->data.data() + static_cast<std::int64_t>(r) * d;
    for (int h = 0; h < n_heads; ++h) {
      const T* xh = xr + h * hd;
      T* yh = yr + h * hd;
      for (int i = 0; i < half; ++i) {
        const double c = cs[pos * half + i], s = sn[pos * half + i];
        const double x0 = xh[2 * i], x1 = xh[2 * i + 1];
        yh[2 * i] = static_cast<T>(x0 * c - x1 * s);
        yh[2 * i + 1] = static_cast<T>(x0 * s + x1 * c);
      }
    }
  }
  record("rope", out, [x, out, tab, n_heads, seq_len, hd, half, rows, d] {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const double* cs = tab->data();
    const double* sn = tab->data() + static_cast<std::size_t>(seq_len) * half;
    for (int r = 0; r < rows; ++r) {
      const int pos = r % seq_len;
      const T* gr = out->grad.data() + static_cast<std::int64_t>(r) * d;
      T* dx = x->grad.data() + static_cast<std::int64_t>(r) * d;
      for (int h = 0; h < n_heads; ++h) {
        const T* gh = gr + h * hd;
        T* dh = dx + h * hd;
        for (int i = 0; i < half; ++i) {
          const double c = cs[pos * half + i], s = sn[pos * half + i];
          const double g0 = gh[2 * i], g1 = gh[2 * i + 1];
          dh[2 * i] += static_cast<T>(g0 * c + g1 * s);
          dh[2 * i + 1] += static_cast<T>(-g0 * s + g1 * c);
        }
      }
    }
  });
  return out;
}

// ===== attention =====

template <typename T>
AttentionResult<T> Graph<T>::causal_attention(const TensorPtr<T>& q, const TensorPtr<T>& k,
                                              const TensorPtr<T>& v, int n_heads, int seq_len,
                                              bool capture_probs) {
  if (!q || !k || !v || q->shape != k->shape || q->shape != v->shape || q->ndim() != 2)
    throw ShapeError("causal_attention: q/k/v must share shape [rows, d_model]");
  const int rows = q->dim(0), d = q->dim(1);
  if (n_heads <= 0 || d % n_heads != 0)
    throw ShapeError("causal_attention: d_model not divisible by heads");
  if (seq_len <= 0 || rows % seq_len != 0)
    throw ShapeError("causal_attention: rows must be a multiple of seq_len");
  const int hd = d / n_heads;
  const int batch = rows / seq_len;
  const int L = seq_len;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  auto out = result("causal_attention", q->shape, {q, k, v});
  const bool recorded = out->requires_grad;
  TensorPtr<T> probs;
  if (capture_probs || recorded) {
    probs = make_tensor<T>({batch * n_heads, L, L});
    probs->requires_grad = recorded;
  }

  CMap<T> qm(q->data.data(), rows, d);
  CMap<T> km(k->data.data(), rows, d);
  CMap<T> vm(v->data.data(), rows, d);
  MMap<T> om(out->data.data(), rows, d);

  ThreadPool::instance().parallel_for(static_cast<std::size_t>(batch) * n_heads, [&](std::size_t c) {
    const int b = static_cast<int>(c) / n_heads;
    const int h = static_cast<int>(c) % n_heads;
    auto qb = qm.block(b * L, h * hd, L, hd);
    auto kb = km.block(b * L, h * hd, L, hd);
    auto vb = vm.block(b * L, h * hd, L, hd);
    Mat<T> local;
    T* pdata;
    if (probs) {
      pdata = probs->data.data() + (static_cast<std::int64_t>(b) * n_heads + h) * L * L;
    } else {
      local.setZero(L, L);
      pdata = local.data();
    }
    MMap<T> pm(pdata, L, L);
    // Scores and softmax row by row over the causal prefix; entries above
    // the diagonal stay exactly zero.
    for (int t = 0; t < L; ++t) {
      Eigen::Matrix<T, 1, Eigen::Dynamic> s =
          qb.row(t) * kb.topRows(t + 1).transpose() * inv_sqrt;
      const T mx = s.maxCoeff();
      double denom = 0.0;
      for (int j = 0; j <= t; ++j) {
        const double e = std::exp(static_cast<double>(s[j] - mx));
        s[j] = static_cast<T>(e);
        denom += e;
      }
      const T inv_denom = static_cast<T>(1.0 / denom);
      for (int j = 0; j <= t; ++j) pm(t, j) = s[j] * inv_denom;
    }
    om.block(b * L, h * hd, L, hd).noalias() = pm * vb;
  });

  if (recorded) {
    nodes_.push_back(Node{"causal_attention", out, probs,
                          [q, k, v, out, probs, n_heads, L, batch, hd, inv_sqrt, d, rows] {
      if (q->requires_grad) q->ensure_grad();
      if (k->requires_grad) k->ensure_grad();
      if (v->requires_grad) v->ensure_grad();
      const bool has_dout = out->has_grad();
      const bool has_dprobs = probs->has_grad();
      CMap<T> qm(q->data.data(), rows, d);
      CMap<T> km(k->data.data(), rows, d);
      CMap<T> vm(v->data.data(), rows, d);
      ThreadPool::instance().parallel_for(static_cast<std::size_t>(batch) * n_heads,
                                          [&](std::size_t c) {
        const int b = static_cast<int>(c) / n_heads;
        const int h = static_cast<int>(c) % n_heads;
        auto qb = qm.block(b * L, h * hd, L, hd);
        auto kb = km.block(b * L, h * hd, L, hd);
        auto vb = vm.block(b * L, h * hd, L, hd);
        const std::int64_t poff = (static_cast<std::int64_t>(b) * n_heads + h) * L * L;
        CMap<T> pm(probs->data.data() + poff, L, L);
        // dP = dOut * V^T (+ any gradient arriving directly on the maps).
        Mat<T> dp(L, L);
        if (has_dout) {
          CMap<T> gom(out->grad.data(), rows, d);
          dp.noalias() = gom.block(b * L, h * hd, L, hd) * vb.transpose();
        } else {
          dp.setZero();
        }
        if (has_dprobs) {
          CMap<T> gpm(probs->grad.data() + poff, L, L);
          dp += gpm;
        }
        // dS = P .* (dP - rowsum(dP .* P)) on the causal prefix.
        Mat<T> ds = Mat<T>::Zero(L, L);
        for (int t = 0; t < L; ++t) {
          double dot = 0.0;
          for (int j = 0; j <= t; ++j) dot += static_cast<double>(dp(t, j)) * pm(t, j);
          const T dt = static_cast<T>(dot);
          for (int j = 0; j <= t; ++j) ds(t, j) = pm(t, j) * (dp(t, j) - dt);
        }
        if (v->requires_grad) {
          MMap<T> gv(v->grad.data(), rows, d);
          if (has_dout) {
            CMap<T> gom(out->grad.data(), rows, d);
            gv.block(b * L, h * hd, L, hd).noalias() +=
                pm.transpose() * gom.block(b * L, h * hd, L, hd);
          }
        }
        if (q->requires_grad) {
          MMap<T> gq(q->grad.data(), rows, d);
          gq.block(b * L, h * hd, L, hd).noalias() += ds * kb * inv_sqrt;
        }
        if (k->requires_grad) {
          MMap<T> gk(k->grad.data(), rows, d);
          gk.block(b * L, h * hd, L, hd).noalias() += ds.transpose() * qb * inv_sqrt;
        }
      });
    }});
    backward_taken_ = false;
  }
  return {out, capture_probs ? probs : nullptr};
}

// ===== distributions / losses =====

namespace {

struct AxisSpan {
  std::int64_t outer, n, inner;
};

template <typename T>
AxisSpan axis_span(const TensorPtr<T>& x, int axis, const char* op) {
  if (!x) throw UsageError(std::string(op) + ": null input");
  if (axis < 0 || axis >= x->ndim())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                     shape_str(x->shape));
  AxisSpan s{1, x->dim(axis), 1};
  for (int i = 0; i < axis; ++i) s.outer *= x->dim(i);
  for (int i = axis + 1; i < x->ndim(); ++i) s.inner *= x->dim(i);
  if (s.n == 0) throw ShapeError(std::string(op) + ": empty axis");
  return s;
}

}  // namespace

template <typename T>
TensorPtr<T> Graph<T>::softmax(const TensorPtr<T>& x, int axis) {
  const AxisSpan sp = axis_span(x, axis, "softmax");
  auto out = result("softmax", x->shape, {x});
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const std::int64_t base = o * sp.n * sp.inner + i;
      T mx = x->data[static_cast<std::size_t>(base)];
      for (std::int64_t j = 1; j < sp.n; ++j)
        mx = std::max(mx, x->data[static_cast<std::size_t>(base + j * sp.inner)]);
      double denom = 0.0;
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const double e =
            std::exp(static_cast<double>(x->data[static_cast<std::size_t>(base + j * sp.inner)] - mx));
        out->data[static_cast<std::size_t>(base + j * sp.inner)] = static_cast<T>(e);
        denom += e;
      }
      const double inv = 1.0 / denom;
      for (std::int64_t j = 0; j < sp.n; ++j)
        out->data[static_cast<std::size_t>(base + j * sp.inner)] =
            static_cast<T>(static_cast<double>(out->data[static_cast<std::size_t>(base + j * sp.inner)]) * inv);
    }
  }
  record("softmax", out, [x, out, sp] {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const std::int64_t base = o * sp.n * sp.inner + i;
        double dot = 0.0;
        for (std::int64_t j = 0; j < sp.n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(base + j * sp.inner);
          dot += static_cast<double>(out->grad[idx]) * out->data[idx];
        }
        for (std::int64_t j = 0; j < sp.n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(base + j * sp.inner);
          x->grad[idx] += out->data[idx] * (out->grad[idx] - static_cast<T>(dot));
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorPtr<T> Graph<T>::kl_divergence(const TensorPtr<T>& p, const TensorPtr<T>& q, int axis) {
  if (!p || !q || p->shape != q->shape) throw ShapeError("kl_divergence: shape mismatch");
  const AxisSpan sp = axis_span(p, axis, "kl_divergence");
  const std::int64_t n_slices = sp.outer * sp.inner;
  // Validate both inputs are distributions along the axis.
  for (const auto& t : {p, q}) {
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const std::int64_t base = o * sp.n * sp.inner + i;
        double s = 0.0;
        for (std::int64_t j = 0; j < sp.n; ++j)
          s += static_cast<double>(t->data[static_cast<std::size_t>(base + j * sp.inner)]);
        if (std::abs(s - 1.0) > 1e-5)
          throw DomainError("kl_divergence: slice does not sum to 1 (got " + std::to_string(s) + ")");
      }
    }
  }
  auto out = result("kl_divergence", {1}, {p, q});
  double acc = 0.0;
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const std::int64_t base = o * sp.n * sp.inner + i;
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const double pv = p->data[static_cast<std::size_t>(base + j * sp.inner)];
        if (pv <= 0.0) continue;  // 0 * log 0 := 0
        const double qv =
            std::max(static_cast<double>(q->data[static_cast<std::size_t>(base + j * sp.inner)]),
                     kProbFloor);
        acc += pv * (std::log(pv) - std::log(qv));
      }
    }
  }
  out->data[0] = static_cast<T>(acc / n_slices);
  record("kl_divergence", out, [p, q, out, sp, n_slices] {
    const double g = static_cast<double>(out->grad[0]) / n_slices;
    if (p->requires_grad) p->ensure_grad();
    if (q->requires_grad) q->ensure_grad();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const std::int64_t base = o * sp.n * sp.inner + i;
        for (std::int64_t j = 0; j < sp.n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(base + j * sp.inner);
          const double pv = p->data[idx];
          const double qv = std::max(static_cast<double>(q->data[idx]), kProbFloor);
          if (q->requires_grad && pv > 0.0 && static_cast<double>(q->data[idx]) > kProbFloor)
            q->grad[idx] += static_cast<T>(-g * pv / qv);
          if (p->requires_grad)
            p->grad[idx] += static_cast<T>(
                g * (std::log(std::max(pv, kProbFloor)) - std::log(qv) + 1.0));
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorPtr<T> Graph<T>::cosine_distance(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (!a || !b || a->shape != b->shape) throw ShapeError("cosine_distance: shape mismatch");
  if (a->ndim() < 1) throw ShapeError("cosine_distance: inputs must have at least one axis");
  const int d = a->dim(a->ndim() - 1);
  const std::int64_t rows = a->numel() / d;
  auto out = result("cosine_distance", {1}, {a, b});
  // Per-row dot and squared norms saved for backward.
  auto saved = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * 3);
  double acc = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* ar = a->data.data() + r * d;
    const T* br = b->data.data() + r * d;
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int i = 0; i < d; ++i) {
      dot += static_cast<double>(ar[i]) * br[i];
      na2 += static_cast<double>(ar[i]) * ar[i];
      nb2 += static_cast<double>(br[i]) * br[i];
    }
    (*saved)[static_cast<std::size_t>(3 * r)] = dot;
    (*saved)[static_cast<std::size_t>(3 * r + 1)] = na2;
    (*saved)[static_cast<std::size_t>(3 * r + 2)] = nb2;
    if (na2 == 0.0 || nb2 == 0.0)
      acc += 1.0;  // zero-norm row: maximal distance, zero gradient
    else
      acc += 1.0 - dot / (std::sqrt(na2) * std::sqrt(nb2));
  }
  out->data[0] = static_cast<T>(acc / rows);
  record("cosine_distance", out, [a, b, out, saved, rows, d] {
    const double g = static_cast<double>(out->grad[0]) / rows;
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double dot = (*saved)[static_cast<std::size_t>(3 * r)];
      const double na2 = (*saved)[static_cast<std::size_t>(3 * r + 1)];
      const double nb2 = (*saved)[static_cast<std::size_t>(3 * r + 2)];
      if (na2 == 0.0 || nb2 == 0.0) continue;
      const double na = std::sqrt(na2), nb = std::sqrt(nb2);
      const double inv_ab = 1.0 / (na * nb);
      const double cosv = dot * inv_ab;
      const T* ar = a->data.data() + r * d;
      const T* br = b->data.data() + r * d;
      if (a->requires_grad) {
        T* da = a->grad.data() + r * d;
        for (int i = 0; i < d; ++i)
          da[i] += static_cast<T>(g * (cosv * ar[i] / na2 - br[i] * inv_ab));
      }
      if (b->requires_grad) {
        T* db = b->grad.data() + r * d;
        for (int i = 0; i < d; ++i)
          db[i] += static_cast<T>(g * (cosv * br[i] / nb2 - ar[i] * inv_ab));
      }
    }
  });
  return out;
}

template <typename T>
TensorPtr<T> Graph<T>::cross_entropy(const TensorPtr<T>& logits, std::vector<int> targets) {
  if (!logits || logits->ndim() != 2) throw ShapeError("cross_entropy: logits must be [rows, vocab]");
  const int n = logits->dim(0), v = logits->dim(1);
  if (static_cast<int>(targets.size()) != n)
    throw ShapeError("cross_entropy: targets length must equal logits rows");
  for (int t : targets)
    if (t < 0 || t >= v) throw DomainError("cross_entropy: target id out of range");
  auto out = result("cross_entropy", {1}, {logits});
  // Softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(logits->data.size());
  double acc = 0.0;
  for (int r = 0; r < n; ++r) {
    const T* xr = logits->data.data() + static_cast<std::int64_t>(r) * v;
    T* pr = probs->data() + static_cast<std::int64_t>(r) * v;
    T mx = xr[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, xr[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) {
      const double e = std::exp(static_cast<double>(xr[j] - mx));
      pr[j] = static_cast<T>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (int j = 0; j < v; ++j) pr[j] = static_cast<T>(static_cast<double>(pr[j]) * inv);
    acc += std::log(denom) + static_cast<double>(mx) - static_cast<double>(xr[targets[static_cast<std::size_t>(r)]]);
  }
  out->data[0] = static_cast<T>(acc / n);
  record("cross_entropy", out, [logits, out, probs, targets = std::move(targets), n, v] {
    if (!logits->requires_grad) return;
    logits->ensure_grad();
    const T g = out->grad[0] / static_cast<T>(n);
    for (int r = 0; r < n; ++r) {
      const T* pr = probs->data() + static_cast<std::int64_t>(r) * v;
      T* dx = logits->grad.data() + static_cast<std::int64_t>(r) * v;
      for (int j = 0; j < v; ++j) dx[j] += g * pr[j];
      dx[targets[static_cast<std::size_t>(r)]] -= g;
    }
  });
  return out;
}

template <typename T>
TensorPtr<T> Graph<T>::sum_scaled(const std::vector<std::pair<T, TensorPtr<T>>>& terms) {
  if (terms.empty()) throw UsageError("sum_scaled: no terms");
  for (const auto& [c, t] : terms)
    if (!t || t->numel() != 1) throw ShapeError("sum_scaled: every term must be a scalar");
  auto out = make_tensor<T>({1});
  bool rg = false;
  double acc = 0.0;
  for (const auto& [c, t] : terms) {
    acc += static_cast<double>(c) * t->data[0];
    rg = rg || t->requires_grad;
  }
  out->data[0] = static_cast<T>(acc);
  out->requires_grad = recording_ && rg;
  record("sum_scaled", out, [out, terms] {
    for (const auto& [c, t] : terms) {
      if (!t->requires_grad) continue;
      t->ensure_grad();
      t->grad[0] += c * out->grad[0];
    }
  });
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace tinydistill
