#include "nlvc/context.hpp"

#include <sstream>

namespace nlvc {

std::string to_string(ContextVariant v) {
  switch (v) {
    case ContextVariant::kBase:
      return "base";
    case ContextVariant::kNonLocal:
      return "nlc";
    case ContextVariant::kMultiFrame:
      return "mnlc";
  }
  return "?";
}

ContextVariant parse_context_variant(const std::string& s) {
  if (s == "base") return ContextVariant::kBase;
  if (s == "nlc") return ContextVariant::kNonLocal;
  if (s == "mnlc") return ContextVariant::kMultiFrame;
  throw ConfigError("unknown context variant '" + s + "' (base | nlc | mnlc)");
}

PyramidBuilder::PyramidBuilder(ParameterStore& store, const std::string& name,
                               std::size_t in_channels,
                               const std::array<std::size_t, kNumScales>& channels, Rng& rng,
                               Init init) {
  std::size_t prev = in_channels;
  for (std::size_t i = 0; i < kNumScales; ++i) {
    convs_[i] = Conv2d(store, name + ".s" + std::to_string(i), prev, channels[i], 3, rng, init);
    prev = channels[i];
  }
}

MultiScaleFeatures PyramidBuilder::operator()(const Tensor& f_prop) const {
  if (f_prop.rank() != 3 || f_prop.dim(1) % 4 != 0 || f_prop.dim(2) % 4 != 0) {
    throw DimensionError("pyramid input extents must be divisible by 4, got " +
                         shape_str(f_prop.shape()));
  }
  MultiScaleFeatures out;
  Tensor cur = f_prop;
  for (std::size_t i = 0; i < kNumScales; ++i) {
    if (i > 0) cur = down2(cur);
    cur = convs_[i](cur);
    out.f[i] = cur;
  }
  return out;
}

namespace {

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

}  // namespace

LocalContexts mine_local(const OffsetDiversity& od, const MultiScaleRefine& refine,
                         const Tensor& ref1_feature, const std::optional<Tensor>& previous,
                         const MotionField& v_scale, ContextVariant variant) {
  LocalContexts out;
  out.cl_ref1 = od(warp(ref1_feature, v_scale), v_scale);
  if (variant != ContextVariant::kMultiFrame) {
    out.cl_ref2 = zeros_like(out.cl_ref1);
    return out;
  }
  if (auto second = second_reference_context(refine, previous, v_scale)) {
    out.cl_ref2 = *second;
    out.second_available = true;
  } else {
    out.cl_ref2 = out.cl_ref1;
  }
  return out;
}

ContextSet mine_contexts(const Tensor& y, const Mhlca& attention, const Tensor& ref1_feature,
                         const std::optional<Tensor>& ref2_feature, const LocalContexts& local,
                         ContextVariant variant) {
  if (y.rank() != 3 || y.dim(1) != local.cl_ref1.dim(1) || y.dim(2) != local.cl_ref1.dim(2)) {
    throw DimensionError("mine_contexts: query " + shape_str(y.shape()) + " vs context " +
                         shape_str(local.cl_ref1.shape()));
  }
  ContextSet ctx;
  ctx.cl_ref1 = local.cl_ref1;
  ctx.cl_ref2 = local.cl_ref2;
  ctx.second_available = local.second_available;
  if (variant == ContextVariant::kBase) {
    ctx.cnl_ref1 = zeros_like(local.cl_ref1);
    ctx.cnl_ref2 = ctx.cnl_ref1;
    return ctx;
  }
  ctx.cnl_ref1 = attention(y, ref1_feature);
  if (variant == ContextVariant::kNonLocal) {
    ctx.cnl_ref2 = zeros_like(ctx.cnl_ref1);
  } else if (ref2_feature && ref2_feature->defined()) {
    ctx.cnl_ref2 = attention(y, *ref2_feature);
  } else {
    ctx.cnl_ref2 = ctx.cnl_ref1;
  }
  return ctx;
}

Fusion::Fusion(ParameterStore& store, const std::string& name, std::size_t y_channels,
               std::size_t context_channels, std::size_t out_channels, bool activate, Rng& rng,
               double slope)
    : conv_(store, name, y_channels + 4 * context_channels, out_channels, 3, rng),
      activate_(activate),
      slope_(slope) {}

Tensor Fusion::operator()(const Tensor& y, const ContextSet& ctx) const {
  Tensor x = conv_(concat({y, ctx.cl_ref1, ctx.cl_ref2, ctx.cnl_ref1, ctx.cnl_ref2}));
  return activate_ ? leaky_relu(x, slope_) : x;
}

ContextSet ScaleMiner::operator()(const Tensor& y, const Tensor& ref1_feature,
                                  const std::optional<Tensor>& ref2_feature,
                                  const MotionField& v_scale,
                                  const std::optional<Tensor>& previous) const {
  LocalContexts local = mine_local(od, refine, ref1_feature, previous, v_scale, variant);
  return mine_contexts(y, attention, ref1_feature, ref2_feature, local, variant);
}

std::string argmax_grid_csv(const std::vector<std::size_t>& indices, std::size_t height,
                            std::size_t width) {
  if (indices.size() != height * width) throw DimensionError("argmax grid size mismatch");
  std::ostringstream os;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) os << (x ? "," : "") << indices[y * width + x];
    os << '\n';
  }
  return os.str();
}

}  // namespace nlvc
