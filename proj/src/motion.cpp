#include "nlvc/motion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace nlvc {

using detail::make_result;
using detail::TensorNode;

MotionField::MotionField(Tensor v) : v_(std::move(v)) {
  if (v_.rank() != 3 || v_.dim(0) != 2) {
    throw DimensionError("motion field must be 2×H×W, got " + shape_str(v_.shape()));
  }
  const double bound = static_cast<double>(std::max(v_.dim(1), v_.dim(2)));
  for (double d : v_.values()) {
    if (!std::isfinite(d) || std::abs(d) > bound) {
      throw InputError("motion vector out of range: " + std::to_string(d));
    }
  }
}

MotionField MotionField::zeros(std::size_t height, std::size_t width) {
  return MotionField(Tensor(Shape{2, height, width}, 0.0));
}

MotionField MotionField::constant(std::size_t height, std::size_t width, double dx, double dy) {
  std::vector<double> v(2 * height * width, dx);
  std::fill(v.begin() + static_cast<long>(height * width), v.end(), dy);
  return MotionField(Tensor(Shape{2, height, width}, std::move(v)));
}

MotionField MotionField::downscaled(std::size_t levels) const {
  TapeScope no_grad(nullptr);
  Tensor v = v_;
  for (std::size_t i = 0; i < levels; ++i) v = scale(down2(v), 0.5);
  return MotionField(v);
}

std::vector<MotionField> flow_pyramid(const MotionField& v, std::size_t levels) {
  std::vector<MotionField> out;
  out.reserve(levels);
  out.push_back(v);
  for (std::size_t i = 1; i < levels; ++i) out.push_back(out.back().downscaled(1));
  return out;
}

namespace {

struct Tap {
  std::size_t i00, i01, i10, i11;
  double tx, ty;
  bool free_x, free_y;  // coordinate not clamped, so it carries a gradient
};

// flow: 2×h×w, dx plane then dy plane.
std::vector<Tap> sample_taps(std::span<const double> flow, std::size_t h, std::size_t w) {
  std::vector<Tap> taps(h * w);
  const double xmax = static_cast<double>(w - 1), ymax = static_cast<double>(h - 1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double rx = static_cast<double>(x) - flow[y * w + x];
      const double ry = static_cast<double>(y) - flow[h * w + y * w + x];
      if (!std::isfinite(rx) || !std::isfinite(ry)) throw InputError("warp: non-finite flow");
      const double sx = std::clamp(rx, 0.0, xmax), sy = std::clamp(ry, 0.0, ymax);
      const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      taps[y * w + x] = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1,
                         sx - static_cast<double>(x0), sy - static_cast<double>(y0),
                         rx > 0.0 && rx < xmax, ry > 0.0 && ry < ymax};
    }
  }
  return taps;
}

std::vector<double> gather(std::span<const double> fv, std::size_t c, std::size_t plane,
                           const std::vector<Tap>& taps) {
  std::vector<double> out(fv.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = fv.data() + ch * plane;
    double* o = out.data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const Tap& t = taps[i];
      // lerp form keeps constants and integer shifts exact
      const double top = p[t.i00] + t.tx * (p[t.i01] - p[t.i00]);
      const double bot = p[t.i10] + t.tx * (p[t.i11] - p[t.i10]);
      o[i] = top + t.ty * (bot - top);
    }
  }
  return out;
}

void scatter_feature_grad(std::vector<double>& g, const double* d, std::size_t c,
                          std::size_t plane, const std::vector<Tap>& taps) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    double* p = g.data() + ch * plane;
    const double* dc = d + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const Tap& t = taps[i];
      p[t.i00] += dc[i] * (1 - t.tx) * (1 - t.ty);
      p[t.i01] += dc[i] * t.tx * (1 - t.ty);
      p[t.i10] += dc[i] * (1 - t.tx) * t.ty;
      p[t.i11] += dc[i] * t.tx * t.ty;
    }
  }
}

}  // namespace

Tensor warp(const Tensor& f, const MotionField& v) {
  if (f.rank() != 3 || f.dim(1) != v.height() || f.dim(2) != v.width()) {
    throw DimensionError("warp: feature " + shape_str(f.shape()) + " vs motion " +
                         shape_str(v.tensor().shape()));
  }
  const std::size_t c = f.dim(0), plane = f.dim(1) * f.dim(2);
  auto taps = sample_taps(v.tensor().values(), f.dim(1), f.dim(2));
  std::vector<double> out = gather(f.values(), c, plane, taps);
  return make_result(f.shape(), std::move(out), {f},
                     [c, plane, taps = std::move(taps)](TensorNode& o) {
                       scatter_feature_grad(o.parents[0]->ensure_grad(), o.grad.data(), c, plane,
                                            taps);
                     });
}

Tensor warp_by(const Tensor& f, const Tensor& flow) {
  if (f.rank() != 3 || flow.rank() != 3 || flow.dim(0) != 2 || f.dim(1) != flow.dim(1) ||
      f.dim(2) != flow.dim(2)) {
    throw DimensionError("warp_by: feature " + shape_str(f.shape()) + " vs flow " +
                         shape_str(flow.shape()));
  }
  const std::size_t c = f.dim(0), plane = f.dim(1) * f.dim(2);
  auto taps = sample_taps(flow.values(), f.dim(1), f.dim(2));
  std::vector<double> out = gather(f.values(), c, plane, taps);
  return make_result(
      f.shape(), std::move(out), {f, flow}, [c, plane, taps = std::move(taps)](TensorNode& o) {
        TensorNode& fn = *o.parents[0];
        TensorNode& vn = *o.parents[1];
        if (vn.wants_grad()) {
          auto& gv = vn.ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double* p = fn.value.data() + ch * plane;
            const double* d = o.grad.data() + ch * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const Tap& t = taps[i];
              const double top = p[t.i00] + t.tx * (p[t.i01] - p[t.i00]);
              const double bot = p[t.i10] + t.tx * (p[t.i11] - p[t.i10]);
              const double ddx = (1 - t.ty) * (p[t.i01] - p[t.i00]) + t.ty * (p[t.i11] - p[t.i10]);
              // sample position is x - dx, hence the sign
              if (t.free_x) gv[i] -= d[i] * ddx;
              if (t.free_y) gv[plane + i] -= d[i] * (bot - top);
            }
          }
        }
        if (fn.wants_grad()) scatter_feature_grad(fn.ensure_grad(), o.grad.data(), c, plane, taps);
      });
}

OffsetDiversity::OffsetDiversity(ParameterStore& store, const std::string& name,
                                 std::size_t channels, OffsetDiversityConfig cfg, Rng& rng,
                                 double slope)
    : cfg_(cfg), slope_(slope) {
  if (cfg_.groups == 0) throw ConfigError("offset diversity needs at least one group");
  const std::size_t g = cfg_.groups;
  hidden_ = Conv2d(store, name + ".hidden", channels + 2, channels, 3, rng);
  out_ = Conv2d(store, name + ".out", channels, 3 * g, 3, rng, Init::kZero);
  // Offset channels start from a fixed pattern: group 0 at the origin, the
  // rest on a circle. Mask logits start at zero (uniform blend).
  auto b = out_.bias.values();
  for (std::size_t k = 1; k < g; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k - 1) /
                     static_cast<double>(std::max<std::size_t>(g - 1, 1));
    b[2 * k] = cfg_.offset_radius * std::cos(a);
    b[2 * k + 1] = cfg_.offset_radius * std::sin(a);
  }
}

OffsetDiversity::Heads OffsetDiversity::heads(const Tensor& f_warped, const MotionField& v) const {
  const std::size_t g = cfg_.groups;
  Tensor raw = out_(leaky_relu(hidden_(concat({f_warped, v.tensor()})), slope_));
  Heads h;
  for (std::size_t k = 0; k < g; ++k) h.offsets.push_back(slice(raw, 2 * k, 2));
  h.masks = softmax(slice(raw, 2 * g, g), 0);
  return h;
}

Tensor OffsetDiversity::blend(const Tensor& f, const std::vector<Tensor>& offsets,
                              const Tensor& masks) {
  if (masks.rank() != 3 || masks.dim(0) != offsets.size()) {
    throw DimensionError("offset diversity: masks " + shape_str(masks.shape()) + " for " +
                         std::to_string(offsets.size()) + " offsets");
  }
  Tensor acc;
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    Tensor term = mul_plane(warp_by(f, offsets[k]), slice(masks, k, 1));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

Tensor OffsetDiversity::operator()(const Tensor& f_warped, const MotionField& v) const {
  Heads h = heads(f_warped, v);
  return blend(f_warped, h.offsets, h.masks);
}

MultiScaleRefine::MultiScaleRefine(ParameterStore& store, const std::string& name,
                                   std::size_t channels, Rng& rng, double slope)
    : low_(store, name + ".low", channels, rng, slope),
      up_proj_(store, name + ".up", channels, channels, 1, rng, Init::kZero),
      high_(store, name + ".high", channels, rng, slope) {}

Tensor MultiScaleRefine::operator()(const Tensor& x) const {
  Tensor low = low_(down2(x));
  return high_(add(x, up_proj_(up2(low))));
}

std::optional<Tensor> second_reference_context(const MultiScaleRefine& refine,
                                               const std::optional<Tensor>& previous,
                                               const MotionField& v) {
  if (!previous || !previous->defined()) return std::nullopt;
  return refine(warp(*previous, v));
}

}  // namespace nlvc

namespace nlvc {

MotionField estimate_motion(const Tensor& prev, const Tensor& cur, std::size_t block,
                            int radius) {
  if (prev.shape() != cur.shape() || cur.rank() != 3) {
    throw DimensionError("estimate_motion: frames " + shape_str(prev.shape()) + " vs " +
                         shape_str(cur.shape()));
  }
  if (block == 0 || radius < 0) throw ConfigError("estimate_motion: bad block/radius");
  const std::size_t c = cur.dim(0), h = cur.dim(1), w = cur.dim(2), plane = h * w;
  auto gray = [&](const Tensor& t) {
    std::vector<double> g(plane, 0.0);
    auto v = t.values();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) g[i] += v[ch * plane + i];
    return g;
  };
  const auto gp = gray(prev), gc = gray(cur);
  std::vector<double> field(2 * plane, 0.0);
  const long hl = static_cast<long>(h), wl = static_cast<long>(w);
  for (std::size_t by = 0; by < h; by += block) {
    for (std::size_t bx = 0; bx < w; bx += block) {
      const std::size_t ey = std::min(by + block, h), ex = std::min(bx + block, w);
      double best = std::numeric_limits<double>::infinity();
      int best_dx = 0, best_dy = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          double sad = 0.0;
          for (std::size_t y = by; y < ey; ++y) {
            const long sy = std::clamp(static_cast<long>(y) - dy, 0L, hl - 1);
            for (std::size_t x = bx; x < ex; ++x) {
              const long sx = std::clamp(static_cast<long>(x) - dx, 0L, wl - 1);
              sad += std::abs(gc[y * w + x] - gp[static_cast<std::size_t>(sy * wl + sx)]);
            }
          }
          const bool closer = std::abs(dx) + std::abs(dy) < std::abs(best_dx) + std::abs(best_dy);
          if (sad < best - 1e-12 || (sad <= best + 1e-12 && closer)) {
            best = sad;
            best_dx = dx;
            best_dy = dy;
          }
        }
      }
      for (std::size_t y = by; y < ey; ++y) {
        for (std::size_t x = bx; x < ex; ++x) {
          field[y * w + x] = best_dx;
          field[plane + y * w + x] = best_dy;
        }
      }
    }
  }
  return MotionField(Tensor(Shape{2, h, w}, std::move(field)));
}

}  // namespace nlvc
