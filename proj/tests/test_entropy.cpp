#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "nlvc/entropy.hpp"
#include "nlvc/range_coder.hpp"

using namespace nlvc;
using nlvc::testing::gradcheck;
using nlvc::testing::random_tensor;

namespace {

Cdf random_cdf(Rng& rng, std::size_t n) {
  std::vector<double> pmf(n);
  for (double& p : pmf) p = std::pow(rng.uniform(), 3.0);
  return quantize_pmf(pmf);
}

}  // namespace

TEST_CASE("quantised pmfs are valid and keep every symbol") {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(600);
    std::vector<double> pmf(n);
    for (double& p : pmf) p = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
    pmf[rng.below(n)] = 1.0;
    Cdf c = quantize_pmf(pmf);
    CHECK_NOTHROW(c.validate());
    CHECK(c.size() == n);
    CHECK(c.cum.back() == kProbTotal);
    for (std::size_t s = 0; s < n; ++s) CHECK(c.freq(s) >= 1);
  }
  CHECK_THROWS(quantize_pmf(std::vector<double>{0.0, 0.0}));
  CHECK_THROWS(quantize_pmf(std::vector<double>(kProbTotal + 1, 1.0)));
}

TEST_CASE("range coder round trips random sources") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(2000);
    std::vector<Cdf> cdfs;
    std::vector<std::size_t> sym(n);
    for (std::size_t i = 0; i < n; ++i) {
      cdfs.push_back(random_cdf(rng, 1 + rng.below(40)));
      sym[i] = rng.below(cdfs.back().size());
    }
    auto bytes = range_encode(sym, cdfs);
    CHECK(range_decode(bytes, cdfs) == sym);
  }
}

TEST_CASE("empty and single-symbol streams") {
  std::vector<Cdf> none;
  std::vector<std::size_t> empty;
  auto bytes = range_encode(empty, none);
  CHECK(range_decode(bytes, none).empty());
  Cdf c = quantize_pmf(std::vector<double>{0.5, 0.5});
  std::vector<Cdf> one{c};
  std::vector<std::size_t> s{1};
  auto b1 = range_encode(s, one);
  // Fixed overhead: marker plus flush, well under 64 bits.
  CHECK(b1.size() * 8 <= 64);
  CHECK(range_decode(b1, one) == s);
}

TEST_CASE("uniform 256-ary source costs 8 bits per symbol") {
  std::vector<double> flat(256, 1.0);
  Cdf c = quantize_pmf(flat);
  Rng rng(43);
  const std::size_t n = 20000;
  std::vector<std::size_t> sym(n);
  for (auto& s : sym) s = rng.below(256);
  std::vector<Cdf> cdfs(n, c);
  auto bytes = range_encode(sym, cdfs);
  const double bps = 8.0 * static_cast<double>(bytes.size()) / static_cast<double>(n);
  CHECK(std::abs(bps - 8.0) < 0.16);
}

TEST_CASE("actual size tracks the ideal code length") {
  Rng rng(44);
  std::vector<double> pmf{0.7, 0.2, 0.05, 0.05};
  Cdf c = quantize_pmf(pmf);
  const std::size_t n = 50000;
  std::vector<std::size_t> sym(n);
  double ideal = 0.0;
  for (auto& s : sym) {
    const double u = rng.uniform();
    s = u < 0.7 ? 0 : u < 0.9 ? 1 : u < 0.95 ? 2 : 3;
    ideal -= std::log2(static_cast<double>(c.freq(s)) / kProbTotal);
  }
  std::vector<Cdf> cdfs(n, c);
  const double actual = 8.0 * static_cast<double>(range_encode(sym, cdfs).size());
  CHECK(actual <= ideal * 1.01 + 64);
  CHECK(actual >= ideal - 1);
}

TEST_CASE("bypass bits round trip") {
  RangeEncoder enc;
  std::vector<std::uint32_t> vals;
  Rng rng(45);
  for (int i = 0; i < 500; ++i) {
    const unsigned nb = 1 + static_cast<unsigned>(rng.below(16));
    const std::uint32_t v = static_cast<std::uint32_t>(rng.below(1u << nb));
    enc.encode_bits(v, nb);
    vals.push_back(v | (nb << 16));
  }
  auto bytes = enc.finish();
  RangeDecoder dec(bytes);
  for (auto packed : vals) {
    const unsigned nb = packed >> 16;
    CHECK(dec.decode_bits(nb) == (packed & 0xFFFF));
  }
  CHECK_NOTHROW(dec.finish());
}

TEST_CASE("corrupted or truncated streams are detected") {
  Rng rng(46);
  std::vector<Cdf> cdfs;
  std::vector<std::size_t> sym;
  for (int i = 0; i < 300; ++i) {
    cdfs.push_back(random_cdf(rng, 8));
    sym.push_back(rng.below(8));
  }
  auto bytes = range_encode(sym, cdfs);
  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  CHECK_THROWS_AS(range_decode(truncated, cdfs), CodecError);
  auto padded = bytes;
  padded.push_back(0);
  CHECK_THROWS_AS(range_decode(padded, cdfs), CodecError);
  auto tail = bytes;
  tail[tail.size() - 5] ^= 0x5A;  // inside the marker
  CHECK_THROWS_AS(range_decode(tail, cdfs), CodecError);
}

TEST_CASE("Gaussian symbol masses") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
  CHECK(normal_cdf(1.0) == doctest::Approx(0.8413447460685429));
  // Mass of [-0.5, 0.5] under N(0, 1).
  CHECK(symbol_probability(0.0, 1.0) == doctest::Approx(0.3829249225480262));
  CHECK(symbol_probability(1.0, 1.0) == doctest::Approx(symbol_probability(-1.0, 1.0)));
  CHECK(symbol_probability(1e6, 0.1) == kMinSymbolProbability);
  CHECK(symbol_bits(1e6, 0.1) == doctest::Approx(32.0));
  double total = 0.0;
  for (int r = -60; r <= 60; ++r) total += symbol_probability(r, 3.7);
  CHECK(std::abs(total - 1.0) < 121 * kMinSymbolProbability + 1e-12);
}

TEST_CASE("gaussian_bits sums per-element code lengths and has exact gradients") {
  Rng rng(47);
  Tensor y = random_tensor({2, 3, 3}, rng, -3, 3);
  Tensor mu = random_tensor({2, 3, 3}, rng, -1, 1);
  Tensor sigma = random_tensor({2, 3, 3}, rng, 0.2, 2.0);
  double expect = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    expect += symbol_bits(y.value(i) - mu.value(i), sigma.value(i));
  }
  CHECK(gaussian_bits(y, mu, sigma).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(gradcheck([&] { return gaussian_bits(y, mu, sigma); }, {y, mu, sigma}).rel_error < 1e-4);
  Tensor raw = random_tensor({5}, rng, -3, 3);
  CHECK(gradcheck([&] { return sum(positive_scale(raw, 0.04)); }, {raw}).rel_error < 1e-4);
  Tensor s = positive_scale(Tensor(Shape{1}, {-50.0}), 0.04);
  CHECK(s.item() >= 0.04);
}

TEST_CASE("latent coder round trips including escapes") {
  LatentCoder coder;
  Rng rng(48);
  const std::size_t n = 3000;
  std::vector<std::int64_t> sym(n);
  std::vector<double> sig(n);
  for (std::size_t i = 0; i < n; ++i) {
    sig[i] = std::exp(rng.uniform(std::log(0.04), std::log(50.0)));
    sym[i] = static_cast<std::int64_t>(std::llround(sig[i] * rng.normal()));
    if (i % 97 == 0) sym[i] = (i % 2 ? 1 : -1) * static_cast<std::int64_t>(100000 + i);
  }
  auto bytes = coder.encode(sym, sig);
  CHECK(coder.decode(bytes, sig) == sym);
  CHECK(coder.radius(0.04) == 1);
  CHECK(coder.radius(1e9) == coder.max_radius);
  CHECK_NOTHROW(coder.cdf(0.7).validate());
}

TEST_CASE("latent coder rate is close to the model estimate") {
  LatentCoder coder;
  Rng rng(49);
  const std::size_t n = 100000;
  std::vector<std::int64_t> sym(n);
  std::vector<double> sig(n);
  double ideal = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sig[i] = std::exp(rng.uniform(std::log(0.3), std::log(8.0)));
    sym[i] = static_cast<std::int64_t>(std::llround(sig[i] * rng.normal()));
    ideal += symbol_bits(static_cast<double>(sym[i]), sig[i]);
  }
  const double actual = 8.0 * static_cast<double>(coder.encode(sym, sig).size());
  CHECK(std::abs(actual - ideal) / ideal < 0.02);
}
