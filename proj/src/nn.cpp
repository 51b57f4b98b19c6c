#include "nlvc/nn.hpp"

#include <cmath>

namespace nlvc {

Tensor ParameterStore::create(const std::string& name, Shape shape, std::vector<double> init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Tensor t = Tensor::parameter(std::move(shape), std::move(init));
  index_[name] = entries_.size();
  entries_.push_back({name, t});
  return t;
}

Tensor ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return Tensor();
  return entries_[it->second].tensor;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (auto& e : entries_) {
    Tensor src = other.find(e.name);
    if (!src.defined() || src.shape() != e.tensor.shape()) {
      throw ConfigError("parameter mismatch on copy: " + e.name);
    }
    auto dst = e.tensor.values();
    auto sv = src.values();
    std::copy(sv.begin(), sv.end(), dst.begin());
  }
}

namespace {

std::vector<double> uniform_init(std::size_t n, double bound, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

}  // namespace

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::size_t in_ch,
               std::size_t out_ch, std::size_t k, Rng& rng, Init init)
    : kernel(k) {
  if (k % 2 == 0) throw ConfigError("conv kernel must be odd: " + name);
  const std::size_t n = out_ch * in_ch * k * k;
  std::vector<double> w(n, 0.0);
  switch (init) {
    case Init::kDefault:
      w = uniform_init(n, std::sqrt(3.0 / static_cast<double>(in_ch * k * k)), rng);
      break;
    case Init::kZero:
      break;
    case Init::kIdentity:
      for (std::size_t c = 0; c < std::min(in_ch, out_ch); ++c)
        w[((c * in_ch + c) * k + k / 2) * k + k / 2] = 1.0;
      break;
    case Init::kAverage:
      for (double& x : w) x = 1.0 / static_cast<double>(in_ch * k * k);
      break;
  }
  weight = store.create(name + ".weight", Shape{out_ch, in_ch, k, k}, std::move(w));
  bias = store.create(name + ".bias", Shape{out_ch}, std::vector<double>(out_ch, 0.0));
}

Tensor Conv2d::operator()(const Tensor& x) const {
  return conv2d(x, weight, bias, 1, kernel / 2);
}

DepthwiseConv2d::DepthwiseConv2d(ParameterStore& store, const std::string& name,
                                 std::size_t channels, Rng& rng, Init init) {
  std::vector<double> w(channels * 9, 0.0);
  if (init == Init::kDefault) {
    w = uniform_init(w.size(), std::sqrt(3.0 / 9.0), rng);
  } else if (init == Init::kIdentity) {
    for (std::size_t c = 0; c < channels; ++c) w[c * 9 + 4] = 1.0;
  } else if (init == Init::kAverage) {
    for (double& x : w) x = 1.0 / 9.0;
  }
  weight = store.create(name + ".weight", Shape{channels, 1, 3, 3}, std::move(w));
  bias = store.create(name + ".bias", Shape{channels}, std::vector<double>(channels, 0.0));
}

Tensor DepthwiseConv2d::operator()(const Tensor& x) const {
  return depthwise_conv2d(x, weight, bias, 1);
}

DepthwiseResBlock::DepthwiseResBlock(ParameterStore& store, const std::string& name,
                                     std::size_t channels, Rng& rng, double slope_)
    : depthwise(store, name + ".dw", channels, rng),
      pointwise(store, name + ".pw", channels, channels, 1, rng, Init::kZero),
      slope(slope_) {}

Tensor DepthwiseResBlock::operator()(const Tensor& x) const {
  return add(x, pointwise(leaky_relu(depthwise(x), slope)));
}

ResBlock::ResBlock(ParameterStore& store, const std::string& name, std::size_t channels,
                   Rng& rng, double slope_)
    : conv1(store, name + ".conv1", channels, channels, 3, rng),
      conv2(store, name + ".conv2", channels, channels, 3, rng, Init::kZero),
      slope(slope_) {}

Tensor ResBlock::operator()(const Tensor& x) const {
  return add(x, conv2(leaky_relu(conv1(x), slope)));
}

void jitter_parameters(ParameterStore& store, double amplitude, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& e : store.entries()) {
    for (double& v : e.tensor.values()) v += rng.uniform(-amplitude, amplitude);
  }
}

}  // namespace nlvc
