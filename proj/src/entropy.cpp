#include "nlvc/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

namespace nlvc {

using detail::make_result;
using detail::TensorNode;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

namespace {

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

// Evaluated on |r| so both bounds sit in the lower tail where erfc is accurate.
double interval_mass(double r, double sigma) {
  const double d = std::abs(r);
  const double hi = (0.5 - d) / sigma;
  const double lo = (-0.5 - d) / sigma;
  if (hi <= 0.0) return normal_cdf(hi) - normal_cdf(lo);
  return 1.0 - normal_cdf(-hi) - normal_cdf(lo);
}

}  // namespace

double symbol_probability(double r, double sigma) {
  return std::max(interval_mass(r, sigma), kMinSymbolProbability);
}

double symbol_bits(double r, double sigma) { return -std::log2(symbol_probability(r, sigma)); }

Tensor gaussian_bits(const Tensor& y_hat, const Tensor& mu, const Tensor& sigma) {
  if (y_hat.shape() != mu.shape() || y_hat.shape() != sigma.shape()) {
    throw DimensionError("gaussian_bits: shapes " + shape_str(y_hat.shape()) + ", " +
                         shape_str(mu.shape()) + ", " + shape_str(sigma.shape()));
  }
  const std::size_t n = y_hat.numel();
  auto yv = y_hat.values();
  auto mv = mu.values();
  auto sv = sigma.values();
  // d(bits)/dr and d(bits)/dsigma per element, kept for the backward pass.
  std::vector<double> dr(n), ds(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = sv[i];
    if (!(s > 0.0)) throw InputError("gaussian_bits: non-positive scale");
    const double r = yv[i] - mv[i];
    const double mass = interval_mass(r, s);
    if (mass <= kMinSymbolProbability) {
      total += 32.0;
      continue;
    }
    total -= std::log2(mass);
    const double zp = (r + 0.5) / s, zm = (r - 0.5) / s;
    const double pp = normal_pdf(zp), pm = normal_pdf(zm);
    const double k = -1.0 / (mass * std::numbers::ln2);
    dr[i] = k * (pp - pm) / s;
    ds[i] = k * -(zp * pp - zm * pm) / s;
  }
  return make_result(Shape{}, {total}, {y_hat, mu, sigma},
                     [n, dr = std::move(dr), ds = std::move(ds)](TensorNode& o) {
                       const double g = o.grad[0];
                       if (o.parents[0]->wants_grad()) {
                         auto& gy = o.parents[0]->ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) gy[i] += g * dr[i];
                       }
                       if (o.parents[1]->wants_grad()) {
                         auto& gm = o.parents[1]->ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) gm[i] -= g * dr[i];
                       }
                       if (o.parents[2]->wants_grad()) {
                         auto& gs = o.parents[2]->ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) gs[i] += g * ds[i];
                       }
                     });
}

Tensor positive_scale(const Tensor& raw, double sigma_min) {
  return add_scalar(softplus(raw), sigma_min);
}

namespace {

// CDFs are built on a log-spaced sigma grid so encoder and decoder agree even
// if sigma differs in the last ulp, and so tables can be cached.
constexpr double kSigmaGridSteps = 64.0;

long sigma_bucket(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw CodecError("latent coder: invalid sigma");
  return std::lround(std::log(sigma) * kSigmaGridSteps);
}

double bucket_sigma(long bucket) { return std::exp(static_cast<double>(bucket) / kSigmaGridSteps); }

void put_exp_golomb(RangeEncoder& enc, std::uint64_t v) {
  const std::uint64_t x = v + 1;
  unsigned nbits = 0;
  while ((x >> nbits) > 1) ++nbits;
  // Unary prefix ending in the leading 1 of x, then the nbits below it. The
  // chunking must match get_exp_golomb call for call.
  for (unsigned i = 0; i < nbits; ++i) enc.encode_bits(0, 1);
  enc.encode_bits(1, 1);
  unsigned left = nbits;
  while (left > 0) {
    const unsigned chunk = std::min(left, 16u);
    left -= chunk;
    enc.encode_bits(static_cast<std::uint32_t>((x >> left) & ((1u << chunk) - 1)), chunk);
  }
}

std::uint64_t get_exp_golomb(RangeDecoder& dec) {
  unsigned nbits = 0;
  while (dec.decode_bits(1) == 0) {
    if (++nbits > 62) throw CodecError("latent coder: escape code too long");
  }
  std::uint64_t x = 1;
  unsigned left = nbits;
  while (left > 0) {
    const unsigned chunk = std::min(left, 16u);
    x = (x << chunk) | dec.decode_bits(chunk);
    left -= chunk;
  }
  return x - 1;
}

class CdfCache {
 public:
  explicit CdfCache(const LatentCoder& coder) : coder_(coder) {}
  const std::pair<int, Cdf>& get(double sigma) {
    const long b = sigma_bucket(sigma);
    auto it = cache_.find(b);
    if (it == cache_.end()) {
      const double s = bucket_sigma(b);
      it = cache_.emplace(b, std::make_pair(coder_.radius(s), coder_.cdf(s))).first;
    }
    return it->second;
  }

 private:
  const LatentCoder& coder_;
  std::unordered_map<long, std::pair<int, Cdf>> cache_;
};

}  // namespace

int LatentCoder::radius(double sigma) const {
  const double r = std::ceil(sigma * tail_sigmas);
  return static_cast<int>(std::clamp(r, 1.0, static_cast<double>(max_radius)));
}

Cdf LatentCoder::cdf(double sigma) const {
  const int r = radius(sigma);
  std::vector<double> pmf(static_cast<std::size_t>(2 * r + 2));
  for (int s = -r; s <= r; ++s) {
    pmf[static_cast<std::size_t>(s + r)] = interval_mass(static_cast<double>(s), sigma);
  }
  pmf.back() = 2.0 * normal_cdf(-(static_cast<double>(r) + 0.5) / sigma);
  return quantize_pmf(pmf);
}

std::vector<std::uint8_t> LatentCoder::encode(std::span<const std::int64_t> symbols,
                                              std::span<const double> sigmas) const {
  if (symbols.size() != sigmas.size()) throw CodecError("latent coder: one sigma per symbol");
  CdfCache cache(*this);
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const auto& [r, table] = cache.get(sigmas[i]);
    const std::int64_t s = symbols[i];
    if (s >= -r && s <= r) {
      enc.encode_symbol(table, static_cast<std::size_t>(s + r));
      continue;
    }
    enc.encode_symbol(table, table.size() - 1);
    const std::uint64_t mag = static_cast<std::uint64_t>(s < 0 ? -s : s);
    put_exp_golomb(enc, mag - static_cast<std::uint64_t>(r) - 1);
    enc.encode_bits(s < 0 ? 1 : 0, 1);
  }
  return enc.finish();
}

std::vector<std::int64_t> LatentCoder::decode(std::span<const std::uint8_t> bytes,
                                              std::span<const double> sigmas) const {
  CdfCache cache(*this);
  RangeDecoder dec(bytes);
  std::vector<std::int64_t> out;
  out.reserve(sigmas.size());
  for (double sigma : sigmas) {
    const auto& [r, table] = cache.get(sigma);
    const std::size_t idx = dec.decode_symbol(table);
    if (idx + 1 < table.size()) {
      out.push_back(static_cast<std::int64_t>(idx) - r);
      continue;
    }
    const std::uint64_t mag = get_exp_golomb(dec) + static_cast<std::uint64_t>(r) + 1;
    const bool negative = dec.decode_bits(1) == 1;
    out.push_back(negative ? -static_cast<std::int64_t>(mag) : static_cast<std::int64_t>(mag));
  }
  dec.finish();
  return out;
}

}  // namespace nlvc
