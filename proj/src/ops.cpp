#include <algorithm>
#include <cmath>

#include "nlvc/tensor.hpp"

namespace nlvc {

using detail::make_result;
using detail::TensorNode;

namespace {

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (a.numel() == 1) return Broadcast::kLeftScalar;
  if (b.numel() == 1) return Broadcast::kRightScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

// Accumulates an output gradient into an operand that may have been broadcast.
void accumulate(TensorNode& operand, const std::vector<double>& g, bool broadcast,
                double factor = 1.0) {
  if (!operand.wants_grad()) return;
  auto& dst = operand.ensure_grad();
  if (broadcast) {
    double s = 0.0;
    for (double v : g) s += v;
    dst[0] += factor * s;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  }
}

template <typename F>
std::vector<double> zip(const Tensor& a, const Tensor& b, Broadcast mode, F f) {
  auto av = a.values();
  auto bv = b.values();
  const std::size_t n = std::max(av.size(), bv.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = mode == Broadcast::kLeftScalar ? av[0] : av[i];
    const double y = mode == Broadcast::kRightScalar ? bv[0] : bv[i];
    out[i] = f(x, y);
  }
  return out;
}

const Shape& result_shape(const Tensor& a, const Tensor& b, Broadcast mode) {
  return mode == Broadcast::kLeftScalar ? b.shape() : a.shape();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast mode = classify(a, b, "add");
  return make_result(result_shape(a, b, mode), zip(a, b, mode, std::plus<>{}), {a, b},
                     [mode](TensorNode& out) {
                       accumulate(*out.parents[0], out.grad, mode == Broadcast::kLeftScalar);
                       accumulate(*out.parents[1], out.grad, mode == Broadcast::kRightScalar);
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast mode = classify(a, b, "sub");
  return make_result(result_shape(a, b, mode), zip(a, b, mode, std::minus<>{}), {a, b},
                     [mode](TensorNode& out) {
                       accumulate(*out.parents[0], out.grad, mode == Broadcast::kLeftScalar);
                       accumulate(*out.parents[1], out.grad, mode == Broadcast::kRightScalar,
                                  -1.0);
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast mode = classify(a, b, "mul");
  return make_result(
      result_shape(a, b, mode), zip(a, b, mode, std::multiplies<>{}), {a, b},
      [mode](TensorNode& out) {
        TensorNode& pa = *out.parents[0];
        TensorNode& pb = *out.parents[1];
        const std::size_t n = out.grad.size();
        auto operand = [&](const TensorNode& t, std::size_t i) {
          return t.value.size() == 1 && n != 1 ? t.value[0] : t.value[i];
        };
        if (pa.wants_grad()) {
          std::vector<double> g(n);
          for (std::size_t i = 0; i < n; ++i) g[i] = out.grad[i] * operand(pb, i);
          accumulate(pa, g, mode == Broadcast::kLeftScalar);
        }
        if (pb.wants_grad()) {
          std::vector<double> g(n);
          for (std::size_t i = 0; i < n; ++i) g[i] = out.grad[i] * operand(pa, i);
          accumulate(pb, g, mode == Broadcast::kRightScalar);
        }
      });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  return make_result(a.shape(), std::move(out), {a},
                     [s](TensorNode& o) { accumulate(*o.parents[0], o.grad, false, s); });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v += s;
  return make_result(a.shape(), std::move(out), {a},
                     [](TensorNode& o) { accumulate(*o.parents[0], o.grad, false); });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v >= 0.0 ? v : slope * v;
  return make_result(x.shape(), std::move(out), {x}, [slope](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (p.value[i] >= 0.0 ? 1.0 : slope);
  });
}

Tensor softplus(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    out[i] = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }
  return make_result(x.shape(), std::move(out), {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = p.value[i];
      const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      g[i] += o.grad[i] * sig;
    }
  });
}

Tensor mul_plane(const Tensor& x, const Tensor& m) {
  if (x.rank() != 3 || m.rank() != 3 || m.dim(0) != 1 || m.dim(1) != x.dim(1) ||
      m.dim(2) != x.dim(2)) {
    throw DimensionError("mul_plane: " + shape_str(x.shape()) + " by " + shape_str(m.shape()));
  }
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  auto xv = x.values();
  auto mv = m.values();
  std::vector<double> out(xv.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = xv[ch * plane + i] * mv[i];
  return make_result(x.shape(), std::move(out), {x, m}, [c, plane](TensorNode& o) {
    TensorNode& px = *o.parents[0];
    TensorNode& pm = *o.parents[1];
    if (px.wants_grad()) {
      auto& g = px.ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i)
          g[ch * plane + i] += o.grad[ch * plane + i] * pm.value[i];
    }
    if (pm.wants_grad()) {
      auto& g = pm.ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i)
          g[i] += o.grad[ch * plane + i] * px.value[ch * plane + i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result(Shape{1}, {s}, {x}, [](TensorNode& o) {
    TensorNode& p = *o.parents[0];
    auto& g = p.ensure_grad();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  const double inv_n = 1.0 / static_cast<double>(av.size());
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  return make_result(Shape{1}, {s * inv_n}, {a, b}, [inv_n](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    const double k = 2.0 * inv_n * o.grad[0];
    if (pa.wants_grad()) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (pa.value[i] - pb.value[i]);
    }
    if (pb.wants_grad()) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (pa.value[i] - pb.value[i]);
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x},
                     [](TensorNode& o) { accumulate(*o.parents[0], o.grad, false); });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return make_result(Shape{c, r}, std::move(out), {x}, [r, c](TensorNode& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

namespace {

// out[M×N] += a[M×K] · b[K×N]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = a[i * k + p];
      if (s == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result(Shape{m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& o) {
    TensorNode& pa = *o.parents[0];
    TensorNode& pb = *o.parents[1];
    const double* dc = o.grad.data();
    if (pa.wants_grad()) {
      // dA = dC · Bᵀ
      auto& ga = pa.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* brow = pb.value.data() + p * n;
          const double* drow = dc + i * n;
          for (std::size_t j = 0; j < n; ++j) s += drow[j] * brow[j];
          ga[i * k + p] += s;
        }
    }
    if (pb.wants_grad()) {
      // dB = Aᵀ · dC
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double s = pa.value[i * k + p];
          if (s == 0.0) continue;
          double* grow = gb.data() + p * n;
          const double* drow = dc + i * n;
          for (std::size_t j = 0; j < n; ++j) grow[j] += s * drow[j];
        }
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xv[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(xv[base + l * inner] - mx);
        out[base + l * inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] *= inv;
    }
  }
  return make_result(s, std::move(out), {x}, [outer, inner, len](TensorNode& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = a * len * inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t i = base + l * inner;
          dot += o.grad[i] * o.value[i];
        }
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t i = base + l * inner;
          g[i] += o.value[i] * (o.grad[i] - dot);
        }
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t lead = 0;
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) {
      throw DimensionError("concat: trailing shapes differ " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    offsets.push_back(out.size());
    lead += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make_result(std::move(shape), std::move(out), parts, [offsets](TensorNode& o) {
    for (std::size_t k = 0; k < o.parents.size(); ++k) {
      TensorNode& p = *o.parents[k];
      if (!p.wants_grad()) continue;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[offsets[k] + i];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.dim(0) || count == 0) throw DimensionError("slice out of range");
  const std::size_t stride = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  auto xv = x.values();
  std::vector<double> out(xv.begin() + begin * stride, xv.begin() + (begin + count) * stride);
  const std::size_t off = begin * stride;
  return make_result(std::move(shape), std::move(out), {x}, [off](TensorNode& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[off + i] += o.grad[i];
  });
}

Tensor chw_to_rows(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("chw_to_rows expects C×H×W");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  return transpose(reshape(x, Shape{c, hw}));
}

Tensor rows_to_chw(const Tensor& rows, std::size_t height, std::size_t width) {
  if (rows.rank() != 2 || rows.dim(0) != height * width) {
    throw DimensionError("rows_to_chw: " + shape_str(rows.shape()) + " vs " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t c = rows.dim(1);
  return reshape(transpose(rows), Shape{c, height, width});
}

}  // namespace nlvc
