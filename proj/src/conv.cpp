#include <algorithm>
#include <cmath>

#include "nlvc/tensor.hpp"

namespace nlvc {

using detail::make_result;
using detail::TensorNode;

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, oh, ow;
};

// Valid output range [lo, hi) along one axis for kernel tap `tap`.
inline void tap_range(std::size_t tap, std::size_t pad, std::size_t stride, std::size_t in,
                      std::size_t out, std::size_t& lo, std::size_t& hi) {
  // input index = o*stride + tap - pad must lie in [0, in)
  const long t = static_cast<long>(tap) - static_cast<long>(pad);
  const long s = static_cast<long>(stride);
  long first = t >= 0 ? 0 : (-t + s - 1) / s;
  long last = (static_cast<long>(in) - 1 - t) / s;  // inclusive
  if (static_cast<long>(in) - 1 - t < 0) last = -1;
  lo = static_cast<std::size_t>(std::max(first, 0L));
  hi = static_cast<std::size_t>(std::clamp(last + 1, 0L, static_cast<long>(out)));
  if (hi < lo) hi = lo;
}

// One (input plane, output plane, kernel) correlation: out += in ⋆ ker.
void correlate_plane(const double* in, const double* ker, double* out, const ConvGeometry& g) {
  for (std::size_t ky = 0; ky < g.k; ++ky) {
    std::size_t y0, y1;
    tap_range(ky, g.pad, g.stride, g.h, g.oh, y0, y1);
    for (std::size_t kx = 0; kx < g.k; ++kx) {
      const double wv = ker[ky * g.k + kx];
      if (wv == 0.0) continue;
      std::size_t x0, x1;
      tap_range(kx, g.pad, g.stride, g.w, g.ow, x0, x1);
      for (std::size_t y = y0; y < y1; ++y) {
        const double* src = in + (y * g.stride + ky - g.pad) * g.w;
        double* dst = out + y * g.ow;
        if (g.stride == 1) {
          for (std::size_t x = x0; x < x1; ++x) dst[x] += wv * src[x + kx - g.pad];
        } else {
          for (std::size_t x = x0; x < x1; ++x) dst[x] += wv * src[x * g.stride + kx - g.pad];
        }
      }
    }
  }
}

// d_in += d_out ⋆ᵀ ker ; d_ker += Σ d_out · in
void correlate_plane_backward(const double* in, const double* ker, const double* dout,
                              double* din, double* dker, const ConvGeometry& g) {
  for (std::size_t ky = 0; ky < g.k; ++ky) {
    std::size_t y0, y1;
    tap_range(ky, g.pad, g.stride, g.h, g.oh, y0, y1);
    for (std::size_t kx = 0; kx < g.k; ++kx) {
      const double wv = ker[ky * g.k + kx];
      std::size_t x0, x1;
      tap_range(kx, g.pad, g.stride, g.w, g.ow, x0, x1);
      double acc = 0.0;
      for (std::size_t y = y0; y < y1; ++y) {
        const std::size_t row = (y * g.stride + ky - g.pad) * g.w;
        const double* d = dout + y * g.ow;
        if (g.stride == 1) {
          const double* s = in + row;
          for (std::size_t x = x0; x < x1; ++x) acc += d[x] * s[x + kx - g.pad];
          if (din && wv != 0.0) {
            double* di = din + row;
            for (std::size_t x = x0; x < x1; ++x) di[x + kx - g.pad] += wv * d[x];
          }
        } else {
          for (std::size_t x = x0; x < x1; ++x) {
            const std::size_t xi = row + x * g.stride + kx - g.pad;
            acc += d[x] * in[xi];
            if (din) din[xi] += wv * d[x];
          }
        }
      }
      if (dker) dker[ky * g.k + kx] += acc;
    }
  }
}

ConvGeometry geometry(const Tensor& x, std::size_t cout, std::size_t k, std::size_t stride,
                      std::size_t pad) {
  ConvGeometry g{};
  g.cin = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.cout = cout;
  g.k = k;
  g.stride = stride;
  g.pad = pad;
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (g.h + 2 * pad < k || g.w + 2 * pad < k) throw DimensionError("conv2d: kernel larger than input");
  g.oh = (g.h + 2 * pad - k) / stride + 1;
  g.ow = (g.w + 2 * pad - k) / stride + 1;
  return g;
}

void check_bias(const Tensor& bias, std::size_t cout) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw DimensionError("conv bias must have shape [" + std::to_string(cout) + "]");
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  }
  const ConvGeometry g = geometry(x, w.dim(0), w.dim(2), stride, padding);
  check_bias(bias, g.cout);
  const std::size_t plane_in = g.h * g.w, plane_out = g.oh * g.ow, kk = g.k * g.k;
  std::vector<double> out(g.cout * plane_out, 0.0);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    double* dst = out.data() + co * plane_out;
    if (bias.defined()) std::fill(dst, dst + plane_out, bias.values()[co]);
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      correlate_plane(xv + ci * plane_in, wv + (co * g.cin + ci) * kk, dst, g);
    }
  }
  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_result(
      Shape{g.cout, g.oh, g.ow}, std::move(out), std::move(parents),
      [g, plane_in, plane_out, kk](TensorNode& o) {
        TensorNode& px = *o.parents[0];
        TensorNode& pw = *o.parents[1];
        double* dx = px.wants_grad() ? px.ensure_grad().data() : nullptr;
        double* dw = pw.wants_grad() ? pw.ensure_grad().data() : nullptr;
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* d = o.grad.data() + co * plane_out;
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const std::size_t wi = (co * g.cin + ci) * kk;
            correlate_plane_backward(px.value.data() + ci * plane_in, pw.value.data() + wi, d,
                                     dx ? dx + ci * plane_in : nullptr, dw ? dw + wi : nullptr, g);
          }
        }
        if (o.parents.size() > 2 && o.parents[2]->wants_grad()) {
          auto& db = o.parents[2]->ensure_grad();
          for (std::size_t co = 0; co < g.cout; ++co) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane_out; ++i) s += o.grad[co * plane_out + i];
            db[co] += s;
          }
        }
      });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(0) != x.dim(0) || w.dim(1) != 1 ||
      w.dim(2) != w.dim(3)) {
    throw DimensionError("depthwise_conv2d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  }
  const ConvGeometry g = geometry(x, x.dim(0), w.dim(2), 1, padding);
  check_bias(bias, g.cout);
  const std::size_t plane_in = g.h * g.w, plane_out = g.oh * g.ow, kk = g.k * g.k;
  std::vector<double> out(g.cout * plane_out, 0.0);
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* dst = out.data() + c * plane_out;
    if (bias.defined()) std::fill(dst, dst + plane_out, bias.values()[c]);
    correlate_plane(x.values().data() + c * plane_in, w.values().data() + c * kk, dst, g);
  }
  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_result(Shape{g.cout, g.oh, g.ow}, std::move(out), std::move(parents),
                     [g, plane_in, plane_out, kk](TensorNode& o) {
                       TensorNode& px = *o.parents[0];
                       TensorNode& pw = *o.parents[1];
                       double* dx = px.wants_grad() ? px.ensure_grad().data() : nullptr;
                       double* dw = pw.wants_grad() ? pw.ensure_grad().data() : nullptr;
                       for (std::size_t c = 0; c < g.cin; ++c) {
                         correlate_plane_backward(px.value.data() + c * plane_in,
                                                  pw.value.data() + c * kk,
                                                  o.grad.data() + c * plane_out,
                                                  dx ? dx + c * plane_in : nullptr,
                                                  dw ? dw + c * kk : nullptr, g);
                       }
                       if (o.parents.size() > 2 && o.parents[2]->wants_grad()) {
                         auto& db = o.parents[2]->ensure_grad();
                         for (std::size_t c = 0; c < g.cout; ++c) {
                           double s = 0.0;
                           for (std::size_t i = 0; i < plane_out; ++i)
                             s += o.grad[c * plane_out + i];
                           db[c] += s;
                         }
                       }
                     });
}

Tensor down2(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("down2 expects C×H×W, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("down2 requires even extents, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  auto xv = x.values();
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t i = ch * h * w + 2 * y * w + 2 * xx;
        // pairwise sums keep constants exact
        out[(ch * oh + y) * ow + xx] = ((xv[i] + xv[i + 1]) + (xv[i + w] + xv[i + w + 1])) * 0.25;
      }
  return make_result(Shape{c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow](TensorNode& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double d = 0.25 * o.grad[(ch * oh + y) * ow + xx];
          const std::size_t i = ch * h * w + 2 * y * w + 2 * xx;
          g[i] += d;
          g[i + 1] += d;
          g[i + w] += d;
          g[i + w + 1] += d;
        }
  });
}

namespace {

// Source taps for output index j of a ×2 half-pixel bilinear upsample.
struct UpTap {
  std::size_t i0, i1;
  double t;
};

std::vector<UpTap> up_taps(std::size_t n) {
  std::vector<UpTap> taps(2 * n);
  for (std::size_t j = 0; j < 2 * n; ++j) {
    double s = (static_cast<double>(j) + 0.5) * 0.5 - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    const std::size_t i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    taps[j] = {i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor up2(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("up2 expects C×H×W, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = 2 * h, ow = 2 * w;
  const auto ty = up_taps(h);
  const auto tx = up_taps(w);
  auto xv = x.values();
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = xv.data() + ch * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      const UpTap& a = ty[y];
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const UpTap& b = tx[xx];
        const double v00 = p[a.i0 * w + b.i0], v01 = p[a.i0 * w + b.i1];
        const double v10 = p[a.i1 * w + b.i0], v11 = p[a.i1 * w + b.i1];
        const double top = v00 + b.t * (v01 - v00);
        const double bot = v10 + b.t * (v11 - v10);
        out[(ch * oh + y) * ow + xx] = top + a.t * (bot - top);
      }
    }
  }
  return make_result(Shape{c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow, ty, tx](TensorNode& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = g.data() + ch * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        const UpTap& a = ty[y];
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const UpTap& b = tx[xx];
          const double d = o.grad[(ch * oh + y) * ow + xx];
          p[a.i0 * w + b.i0] += d * (1 - a.t) * (1 - b.t);
          p[a.i0 * w + b.i1] += d * (1 - a.t) * b.t;
          p[a.i1 * w + b.i0] += d * a.t * (1 - b.t);
          p[a.i1 * w + b.i1] += d * a.t * b.t;
        }
      }
    }
  });
}

}  // namespace nlvc
