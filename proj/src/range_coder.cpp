#include "nlvc/range_coder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nlvc {

namespace {

constexpr std::uint32_t kTop = 1u << 24;
constexpr std::uint32_t kBottom = 1u << 16;
constexpr std::uint32_t kMarker = 0xA5C3u;
constexpr unsigned kMarkerBits = 16;

}  // namespace

void Cdf::validate() const {
  if (cum.size() < 2 || cum.front() != 0 || cum.back() != kProbTotal) {
    throw CodecError("malformed CDF: bad endpoints");
  }
  for (std::size_t i = 1; i < cum.size(); ++i) {
    if (cum[i] <= cum[i - 1]) throw CodecError("malformed CDF: not strictly increasing");
  }
}

Cdf quantize_pmf(std::span<const double> pmf) {
  const std::size_t n = pmf.size();
  if (n == 0 || n > kProbTotal) throw CodecError("pmf size out of range");
  double total = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw CodecError("pmf has invalid weight");
    total += p;
  }
  if (total <= 0.0) throw CodecError("pmf has zero mass");
  const std::uint32_t spare = kProbTotal - static_cast<std::uint32_t>(n);
  std::vector<std::uint32_t> freq(n);
  std::uint32_t used = 0;
  std::size_t argmax = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double share = pmf[i] / total * static_cast<double>(spare);
    freq[i] = 1 + static_cast<std::uint32_t>(std::floor(share));
    used += freq[i];
    if (pmf[i] > pmf[argmax]) argmax = i;
  }
  // floor() can only under-allocate; the remainder goes to the mode.
  freq[argmax] += kProbTotal - used;
  Cdf cdf;
  cdf.cum.resize(n + 1);
  cdf.cum[0] = 0;
  for (std::size_t i = 0; i < n; ++i) cdf.cum[i + 1] = cdf.cum[i] + freq[i];
  return cdf;
}

void RangeEncoder::normalize() {
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBottom && ((range_ = (0u - low_) & (kBottom - 1)), true))) {
    out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
    low_ <<= 8;
    range_ <<= 8;
  }
}

void RangeEncoder::encode(std::uint32_t cum_freq, std::uint32_t freq) {
  range_ >>= kProbBits;
  low_ += cum_freq * range_;
  range_ *= freq;
  normalize();
}

void RangeEncoder::encode_symbol(const Cdf& cdf, std::size_t symbol) {
  if (symbol >= cdf.size()) throw CodecError("symbol outside CDF alphabet");
  encode(cdf.cum[symbol], cdf.freq(symbol));
}

void RangeEncoder::encode_bits(std::uint32_t value, unsigned nbits) {
  if (nbits == 0) return;
  if (nbits > 16) throw CodecError("encode_bits: at most 16 bits per call");
  range_ >>= nbits;
  low_ += (value & ((1u << nbits) - 1)) * range_;
  normalize();
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  encode_bits(kMarker, kMarkerBits);
  for (int i = 0; i < 4; ++i) {
    out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
    low_ <<= 8;
  }
  std::vector<std::uint8_t> out;
  out.swap(out_);
  low_ = 0;
  range_ = 0xFFFFFFFFu;
  return out;
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= data_.size()) {
    overrun_ = true;
    return 0;
  }
  return data_[pos_++];
}

std::uint32_t RangeDecoder::peek_freq() {
  range_ >>= kProbBits;
  const std::uint32_t f = (code_ - low_) / range_;
  if (f >= kProbTotal) throw CodecError("range decoder: corrupted stream");
  return f;
}

void RangeDecoder::consume(std::uint32_t cum_freq, std::uint32_t freq) {
  low_ += cum_freq * range_;
  range_ *= freq;
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBottom && ((range_ = (0u - low_) & (kBottom - 1)), true))) {
    code_ = (code_ << 8) | next_byte();
    low_ <<= 8;
    range_ <<= 8;
  }
}

std::size_t RangeDecoder::decode_symbol(const Cdf& cdf) {
  const std::uint32_t f = peek_freq();
  auto it = std::upper_bound(cdf.cum.begin(), cdf.cum.end(), f);
  const std::size_t s = static_cast<std::size_t>(it - cdf.cum.begin()) - 1;
  if (s >= cdf.size()) throw CodecError("range decoder: symbol outside alphabet");
  consume(cdf.cum[s], cdf.freq(s));
  return s;
}

std::uint32_t RangeDecoder::decode_bits(unsigned nbits) {
  if (nbits == 0) return 0;
  if (nbits > 16) throw CodecError("decode_bits: at most 16 bits per call");
  range_ >>= nbits;
  const std::uint32_t v = (code_ - low_) / range_;
  if (v >= (1u << nbits)) throw CodecError("range decoder: corrupted stream");
  low_ += v * range_;
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBottom && ((range_ = (0u - low_) & (kBottom - 1)), true))) {
    code_ = (code_ << 8) | next_byte();
    low_ <<= 8;
    range_ <<= 8;
  }
  return v;
}

void RangeDecoder::finish() {
  const std::uint32_t marker = decode_bits(kMarkerBits);
  if (marker != kMarker || overrun_ || pos_ != data_.size()) {
    throw CodecError("range decoder: final-state check failed (" + std::to_string(pos_) + "/" +
                     std::to_string(data_.size()) + " bytes consumed)");
  }
}

std::vector<std::uint8_t> range_encode(std::span<const std::size_t> symbols,
                                       std::span<const Cdf> cdfs) {
  if (symbols.size() != cdfs.size()) throw CodecError("range_encode: one CDF per symbol");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) enc.encode_symbol(cdfs[i], symbols[i]);
  return enc.finish();
}

std::vector<std::size_t> range_decode(std::span<const std::uint8_t> bytes,
                                      std::span<const Cdf> cdfs) {
  RangeDecoder dec(bytes);
  std::vector<std::size_t> out;
  out.reserve(cdfs.size());
  for (const Cdf& c : cdfs) out.push_back(dec.decode_symbol(c));
  dec.finish();
  return out;
}

}  // namespace nlvc
