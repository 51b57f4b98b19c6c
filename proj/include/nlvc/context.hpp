#pragma once

// Multiple-frame context mining: multi-scale reference features, local
// contexts from motion compensation (first reference via offset diversity,
// second via reuse of the previous local context) and non-local contexts from
// cross attention against both references.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "nlvc/attention.hpp"
#include "nlvc/motion.hpp"
#include "nlvc/nn.hpp"

namespace nlvc {

inline constexpr std::size_t kNumScales = 3;

// Which context streams feed the conditional coder.
enum class ContextVariant {
  kBase,        // local context from the first reference only
  kNonLocal,    // + non-local context from the first reference
  kMultiFrame,  // local and non-local contexts from both references
};

std::string to_string(ContextVariant v);
ContextVariant parse_context_variant(const std::string& s);

struct MultiScaleFeatures {
  std::array<Tensor, kNumScales> f;
};

// conv + down2 ladder over a full-resolution propagated feature.
class PyramidBuilder {
 public:
  PyramidBuilder() = default;
  PyramidBuilder(ParameterStore& store, const std::string& name, std::size_t in_channels,
                 const std::array<std::size_t, kNumScales>& channels, Rng& rng,
                 Init init = Init::kDefault);
  MultiScaleFeatures operator()(const Tensor& f_prop) const;

 private:
  std::array<Conv2d, kNumScales> convs_;
};

struct LocalContexts {
  Tensor cl_ref1;
  Tensor cl_ref2;
  bool second_available = false;
};

struct ContextSet {
  Tensor cl_ref1;
  Tensor cl_ref2;
  Tensor cnl_ref1;
  Tensor cnl_ref2;
  bool second_available = false;

  std::vector<Tensor> streams() const { return {cl_ref1, cl_ref2, cnl_ref1, cnl_ref2}; }
};

// Local contexts at one scale. `previous` is the stored first-reference local
// context of the previous frame; when absent, cl_ref2 duplicates cl_ref1.
LocalContexts mine_local(const OffsetDiversity& od, const MultiScaleRefine& refine,
                         const Tensor& ref1_feature, const std::optional<Tensor>& previous,
                         const MotionField& v_scale, ContextVariant variant);

// Adds non-local contexts for query y. A missing second reference falls back to
// the first-reference stream. Streams disabled by `variant` are zero tensors.
ContextSet mine_contexts(const Tensor& y, const Mhlca& attention, const Tensor& ref1_feature,
                         const std::optional<Tensor>& ref2_feature, const LocalContexts& local,
                         ContextVariant variant);

// Channel-concatenates [y, contexts...] and applies a 3×3 conv (+ activation).
class Fusion {
 public:
  Fusion() = default;
  Fusion(ParameterStore& store, const std::string& name, std::size_t y_channels,
         std::size_t context_channels, std::size_t out_channels, bool activate, Rng& rng,
         double slope);
  Tensor operator()(const Tensor& y, const ContextSet& ctx) const;
  std::size_t out_channels() const { return conv_.out_channels(); }

 private:
  Conv2d conv_;
  bool activate_ = true;
  double slope_ = kDefaultLeakySlope;
};

// Everything needed to mine one scale for one query stream.
struct ScaleMiner {
  OffsetDiversity od;
  MultiScaleRefine refine;
  Mhlca attention;
  ContextVariant variant = ContextVariant::kMultiFrame;

  ContextSet operator()(const Tensor& y, const Tensor& ref1_feature,
                        const std::optional<Tensor>& ref2_feature, const MotionField& v_scale,
                        const std::optional<Tensor>& previous) const;
};

// Row-major H×W grid of key indices as CSV (one image row per line).
std::string argmax_grid_csv(const std::vector<std::size_t>& indices, std::size_t height,
                            std::size_t width);

}  // namespace nlvc
