#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nlvc/nn.hpp"
#include "nlvc/tensor.hpp"

namespace nlvc {

struct AttentionConfig {
  std::size_t embed_dim = 8;
  std::size_t num_heads = 4;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  // Throws ConfigError unless embed_dim is a positive multiple of num_heads.
  void validate() const;
};

struct VanillaAttention {
  Tensor output;      // L×d
  Tensor similarity;  // L×L', kept for inspection
};

// Softmax(Q·Kᵀ)·V with a row softmax. Quadratic in sequence length.
VanillaAttention vanilla_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Softmax₂(Q)·(Softmax₁(K)ᵀ·V): Q normalised over channels, K over positions.
// The d×d key-value product is formed first; no L×L' buffer is created.
Tensor linear_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Materialised Softmax₂(Q)·Softmax₁(K)ᵀ. O(L·L') memory; tests and probes only.
Tensor implicit_similarity(const Tensor& q, const Tensor& k);

// F_Q: 1×1 projection to d channels followed by a depth-wise res block.
class QueryEmbedding {
 public:
  QueryEmbedding() = default;
  QueryEmbedding(ParameterStore& store, const std::string& name, std::size_t in_channels,
                 std::size_t dim, Rng& rng, double slope);
  // C×H×W -> d×H×W
  Tensor operator()(const Tensor& y) const;

 private:
  Conv2d proj_;
  DepthwiseResBlock block_;
};

// F_KV: shared projection + depth-wise res block trunk with separate K and V heads.
class KeyValueEmbedding {
 public:
  KeyValueEmbedding() = default;
  KeyValueEmbedding(ParameterStore& store, const std::string& name, std::size_t in_channels,
                    std::size_t dim, Rng& rng, double slope);
  // C×H×W -> (K, V), each d×H×W
  std::pair<Tensor, Tensor> operator()(const Tensor& f) const;

 private:
  Conv2d proj_;
  DepthwiseResBlock trunk_;
  Conv2d head_k_;
  Conv2d head_v_;
};

// Row layout helpers around the embeddings: returns L×d.
Tensor embed_q(const QueryEmbedding& fq, const Tensor& y);
std::pair<Tensor, Tensor> embed_kv(const KeyValueEmbedding& fkv, const Tensor& f);

// Multi-head linear cross attention between a current feature (queries) and a
// reference feature (keys/values), followed by a depth-wise res block.
class Mhlca {
 public:
  Mhlca() = default;
  Mhlca(ParameterStore& store, const std::string& name, std::size_t query_channels,
        std::size_t ref_channels, AttentionConfig cfg, Rng& rng, double slope);

  // y: Cq×H×W, f_ref: Cr×H'×W'. Returns d×H×W.
  Tensor operator()(const Tensor& y, const Tensor& f_ref) const;

  // Per-query index of the reference position with the largest implicit
  // similarity (head-averaged). Length H·W, row-major.
  std::vector<std::size_t> argmax_keys(const Tensor& y, const Tensor& f_ref) const;

  const AttentionConfig& config() const { return cfg_; }

 private:
  AttentionConfig cfg_;
  QueryEmbedding fq_;
  KeyValueEmbedding fkv_;
  DepthwiseResBlock out_;
};

enum class AttentionMode { kVanilla, kLinear };

// Multiply-adds for attention over an H×W map with d channels:
// vanilla 2·(HW)²·d, linear 2·HW·d².
std::uint64_t op_count(AttentionMode mode, std::uint64_t height, std::uint64_t width,
                       std::uint64_t dim);
// linear / vanilla = d / (H·W)
double op_ratio(std::uint64_t height, std::uint64_t width, std::uint64_t dim);

struct BenchRow {
  AttentionMode mode;
  std::size_t length;
  std::size_t dim;
  std::size_t heads;
  std::uint64_t mul_adds;
  std::uint64_t wall_ns;  // mean over runs
};

std::string to_string(AttentionMode mode);
std::vector<BenchRow> benchmark_attention(const std::vector<std::size_t>& lengths,
                                          std::size_t dim, std::size_t heads, std::size_t runs,
                                          std::uint64_t seed, bool include_vanilla = true);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace nlvc
