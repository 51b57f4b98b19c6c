#pragma once

// Carry-less range coder (32-bit state, byte-wise renormalisation) with 16-bit
// probability precision. Encoder and decoder must see bit-identical CDFs.

#include <cstdint>
#include <span>
#include <vector>

#include "nlvc/errors.hpp"

namespace nlvc {

inline constexpr unsigned kProbBits = 16;
inline constexpr std::uint32_t kProbTotal = 1u << kProbBits;

// Cumulative frequency table: cum[0] = 0, cum[n] = kProbTotal, strictly increasing.
struct Cdf {
  std::vector<std::uint32_t> cum;

  std::size_t size() const { return cum.empty() ? 0 : cum.size() - 1; }
  std::uint32_t freq(std::size_t s) const { return cum[s + 1] - cum[s]; }
  void validate() const;
};

// Quantises a pmf (any non-negative weights with positive sum) to a Cdf in
// which every symbol keeps a frequency of at least 1.
Cdf quantize_pmf(std::span<const double> pmf);

class RangeEncoder {
 public:
  void encode(std::uint32_t cum_freq, std::uint32_t freq);
  void encode_symbol(const Cdf& cdf, std::size_t symbol);
  // Equiprobable bits, at most 16 per call.
  void encode_bits(std::uint32_t value, unsigned nbits);
  // Appends the integrity marker, flushes, and returns the stream.
  std::vector<std::uint8_t> finish();

 private:
  void normalize();

  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> data);

  std::size_t decode_symbol(const Cdf& cdf);
  std::uint32_t decode_bits(unsigned nbits);
  // Verifies the integrity marker and that every byte was consumed.
  // Throws CodecError otherwise.
  void finish();

 private:
  std::uint32_t peek_freq();
  void consume(std::uint32_t cum_freq, std::uint32_t freq);
  std::uint8_t next_byte();

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  bool overrun_ = false;
  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t code_ = 0;
};

std::vector<std::uint8_t> range_encode(std::span<const std::size_t> symbols,
                                       std::span<const Cdf> cdfs);
std::vector<std::size_t> range_decode(std::span<const std::uint8_t> bytes,
                                      std::span<const Cdf> cdfs);

}  // namespace nlvc
