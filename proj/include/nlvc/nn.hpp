#pragma once

// Parameter registry and the small convolutional blocks shared by the
// attention, motion, context and codec modules.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nlvc/rng.hpp"
#include "nlvc/tensor.hpp"

namespace nlvc {

// Named, insertion-ordered set of trainable leaves.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor create(const std::string& name, Shape shape, std::vector<double> init);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  Tensor find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();
  // Copies values from a store with identical names and shapes.
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

enum class Init { kDefault, kZero, kIdentity, kAverage };

// k×k convolution with bias, "same" padding.
struct Conv2d {
  Tensor weight;
  Tensor bias;
  std::size_t kernel = 3;

  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, std::size_t in_ch, std::size_t out_ch,
         std::size_t kernel, Rng& rng, Init init = Init::kDefault);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
};

struct DepthwiseConv2d {
  Tensor weight;
  Tensor bias;

  DepthwiseConv2d() = default;
  DepthwiseConv2d(ParameterStore& store, const std::string& name, std::size_t channels,
                  Rng& rng, Init init = Init::kDefault);
  Tensor operator()(const Tensor& x) const;
};

// x + pointwise(act(depthwise3x3(x))). The pointwise branch starts at zero so a
// fresh block is an identity map.
struct DepthwiseResBlock {
  DepthwiseConv2d depthwise;
  Conv2d pointwise;
  double slope = kDefaultLeakySlope;

  DepthwiseResBlock() = default;
  DepthwiseResBlock(ParameterStore& store, const std::string& name, std::size_t channels,
                    Rng& rng, double slope);
  Tensor operator()(const Tensor& x) const;
};

// x + conv2(act(conv1(x))), conv2 zero-initialised.
struct ResBlock {
  Conv2d conv1;
  Conv2d conv2;
  double slope = kDefaultLeakySlope;

  ResBlock() = default;
  ResBlock(ParameterStore& store, const std::string& name, std::size_t channels, Rng& rng,
           double slope);
  Tensor operator()(const Tensor& x) const;
};

// Perturbs every parameter by uniform noise in [-amplitude, amplitude]. Used
// by tests so zero-initialised branches carry non-trivial gradients.
void jitter_parameters(ParameterStore& store, double amplitude, std::uint64_t seed);

}  // namespace nlvc
