#pragma once

#include <stdexcept>
#include <string>

namespace nlvc {

// Shape disagreement between operands (or odd extents where even ones are required).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. calling backward() on a non-scalar.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bitstream integrity failures: corrupted payloads, encoder/decoder divergence.
class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// BD-rate requested on curves without a common quality interval.
class MetricUndefined : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace nlvc
