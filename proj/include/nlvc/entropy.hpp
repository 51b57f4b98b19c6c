#pragma once

// Factorised Gaussian entropy model for the quantised latent: differentiable
// bit estimate for training and an arithmetic-coding path for real bitstreams.

#include <cstdint>
#include <span>
#include <vector>

#include "nlvc/range_coder.hpp"
#include "nlvc/tensor.hpp"

namespace nlvc {

inline constexpr double kMinSymbolProbability = 0x1p-32;

// Standard normal CDF.
double normal_cdf(double z);
// Mass of [r - 0.5, r + 0.5] under N(0, sigma^2), floored at kMinSymbolProbability.
double symbol_probability(double r, double sigma);
double symbol_bits(double r, double sigma);

// Total -log2 p(y_hat | mu, sigma) over all elements, as a scalar tensor with
// gradients to all three inputs.
Tensor gaussian_bits(const Tensor& y_hat, const Tensor& mu, const Tensor& sigma);

// sigma = sigma_min + softplus(raw)
Tensor positive_scale(const Tensor& raw, double sigma_min);

// Integer latent symbols coded against per-element Gaussian CDFs. Values
// outside the modelled support go through an escape symbol plus bypass bits.
struct LatentCoder {
  double tail_sigmas = 8.0;
  int max_radius = 4096;

  // Support radius R for a given sigma (alphabet is [-R, R] plus escape).
  int radius(double sigma) const;
  Cdf cdf(double sigma) const;

  std::vector<std::uint8_t> encode(std::span<const std::int64_t> symbols,
                                   std::span<const double> sigmas) const;
  std::vector<std::int64_t> decode(std::span<const std::uint8_t> bytes,
                                   std::span<const double> sigmas) const;
};

}  // namespace nlvc
