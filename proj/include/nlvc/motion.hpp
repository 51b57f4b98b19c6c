#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nlvc/nn.hpp"
#include "nlvc/tensor.hpp"

namespace nlvc {

// Per-pixel displacement (dx, dy) in pixels, stored as a 2×H×W tensor.
// Content at x in frame t-1 appears at x + v(x) in frame t.
class MotionField {
 public:
  MotionField() = default;
  explicit MotionField(Tensor v);
  static MotionField zeros(std::size_t height, std::size_t width);
  static MotionField constant(std::size_t height, std::size_t width, double dx, double dy);

  const Tensor& tensor() const { return v_; }
  std::size_t height() const { return v_.dim(1); }
  std::size_t width() const { return v_.dim(2); }
  double dx(std::size_t y, std::size_t x) const { return v_.values()[y * width() + x]; }
  double dy(std::size_t y, std::size_t x) const {
    return v_.values()[height() * width() + y * width() + x];
  }

  // Average-pooled and magnitude-scaled by 1/2 per level.
  MotionField downscaled(std::size_t levels) const;

 private:
  Tensor v_;
};

// Bilinear sampling of f at (x - dx, y - dy) with clamp-to-edge coordinates.
// Differentiable with respect to f only.
Tensor warp(const Tensor& f, const MotionField& v);

// Same sampling with a flow tensor (2×H×W) that may itself require gradients.
// Coordinates that hit the clamp carry no flow gradient.
Tensor warp_by(const Tensor& f, const Tensor& flow);

// One field per pyramid level: level i is downscaled i times.
std::vector<MotionField> flow_pyramid(const MotionField& v, std::size_t levels);

struct OffsetDiversityConfig {
  std::size_t groups = 4;
  // Radius of the fixed offset pattern the offset head starts from.
  double offset_radius = 0.5;
};

// Simplified offset diversity: G residual offset fields and G softmax masks are
// predicted from (warped feature, motion); the output blends G re-warped copies.
// Offsets and masks are both trained through the bilinear sampler.
class OffsetDiversity {
 public:
  struct Heads {
    std::vector<Tensor> offsets;  // G fields, 2×H×W each
    Tensor masks;                 // G×H×W, softmax over groups
  };

  OffsetDiversity() = default;
  OffsetDiversity(ParameterStore& store, const std::string& name, std::size_t channels,
                  OffsetDiversityConfig cfg, Rng& rng, double slope);

  Heads heads(const Tensor& f_warped, const MotionField& v) const;
  Tensor operator()(const Tensor& f_warped, const MotionField& v) const;
  const OffsetDiversityConfig& config() const { return cfg_; }

  // Σ_g masks[g] ⊙ warp(f, offsets[g])
  static Tensor blend(const Tensor& f, const std::vector<Tensor>& offsets,
                      const Tensor& masks);

 private:
  OffsetDiversityConfig cfg_;
  Conv2d hidden_;
  Conv2d out_;
  double slope_ = kDefaultLeakySlope;
};

// U-shaped refinement: down2 -> res block -> up2 -> (skip add) -> res block.
// Identity map at initialisation.
class MultiScaleRefine {
 public:
  MultiScaleRefine() = default;
  MultiScaleRefine(ParameterStore& store, const std::string& name, std::size_t channels,
                   Rng& rng, double slope);
  Tensor operator()(const Tensor& x) const;

 private:
  ResBlock low_;
  Conv2d up_proj_;
  ResBlock high_;
};

// Second-reference local context: refine(warp(previous local context, v_t)).
// Returns nullopt when no previous context exists (first P-frame); the caller
// substitutes the first-reference context.
std::optional<Tensor> second_reference_context(const MultiScaleRefine& refine,
                                               const std::optional<Tensor>& previous,
                                               const MotionField& v);

// Motion bits attributed to the second-reference path.
inline constexpr double kSecondReferenceMotionBits = 0.0;

// Exhaustive integer block matching (SAD over the channel mean). Returns the
// field v with cur(x) ≈ prev(x - v), constant per block.
MotionField estimate_motion(const Tensor& prev, const Tensor& cur, std::size_t block = 8,
                            int radius = 8);

}  // namespace nlvc
