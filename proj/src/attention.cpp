#include "nlvc/attention.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace nlvc {

void AttentionConfig::validate() const {
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("attention: embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  }
}

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                         ", V " + shape_str(v.shape()));
  }
}

}  // namespace

VanillaAttention vanilla_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  check_qkv(q, k, v);
  Tensor sim = softmax(matmul(q, transpose(k)), 1);
  return {matmul(sim, v), sim};
}

Tensor linear_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  check_qkv(q, k, v);
  Tensor kv = matmul(transpose(softmax(k, 0)), v);
  return matmul(softmax(q, 1), kv);
}

Tensor implicit_similarity(const Tensor& q, const Tensor& k) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
    throw DimensionError("implicit_similarity: Q " + shape_str(q.shape()) + ", K " +
                         shape_str(k.shape()));
  }
  return matmul(softmax(q, 1), transpose(softmax(k, 0)));
}

QueryEmbedding::QueryEmbedding(ParameterStore& store, const std::string& name,
                               std::size_t in_channels, std::size_t dim, Rng& rng, double slope)
    : proj_(store, name + ".proj", in_channels, dim, 1, rng),
      block_(store, name + ".block", dim, rng, slope) {}

Tensor QueryEmbedding::operator()(const Tensor& y) const { return block_(proj_(y)); }

KeyValueEmbedding::KeyValueEmbedding(ParameterStore& store, const std::string& name,
                                     std::size_t in_channels, std::size_t dim, Rng& rng,
                                     double slope)
    : proj_(store, name + ".proj", in_channels, dim, 1, rng),
      trunk_(store, name + ".trunk", dim, rng, slope),
      head_k_(store, name + ".k", dim, dim, 1, rng),
      head_v_(store, name + ".v", dim, dim, 1, rng) {}

std::pair<Tensor, Tensor> KeyValueEmbedding::operator()(const Tensor& f) const {
  Tensor t = trunk_(proj_(f));
  return {head_k_(t), head_v_(t)};
}

Tensor embed_q(const QueryEmbedding& fq, const Tensor& y) { return chw_to_rows(fq(y)); }

std::pair<Tensor, Tensor> embed_kv(const KeyValueEmbedding& fkv, const Tensor& f) {
  auto [k, v] = fkv(f);
  return {chw_to_rows(k), chw_to_rows(v)};
}

Mhlca::Mhlca(ParameterStore& store, const std::string& name, std::size_t query_channels,
             std::size_t ref_channels, AttentionConfig cfg, Rng& rng, double slope)
    : cfg_(cfg) {
  cfg_.validate();
  fq_ = QueryEmbedding(store, name + ".fq", query_channels, cfg_.embed_dim, rng, slope);
  fkv_ = KeyValueEmbedding(store, name + ".fkv", ref_channels, cfg_.embed_dim, rng, slope);
  out_ = DepthwiseResBlock(store, name + ".out", cfg_.embed_dim, rng, slope);
}

Tensor Mhlca::operator()(const Tensor& y, const Tensor& f_ref) const {
  if (y.rank() != 3 || f_ref.rank() != 3) throw DimensionError("mhlca expects C×H×W inputs");
  const std::size_t h = y.dim(1), w = y.dim(2);
  Tensor q = fq_(y);
  auto [k, v] = fkv_(f_ref);
  const std::size_t dh = cfg_.head_dim();
  Tensor merged;
  if (cfg_.num_heads == 1) {
    merged = rows_to_chw(linear_cross_attention(chw_to_rows(q), chw_to_rows(k), chw_to_rows(v)),
                         h, w);
  } else {
    std::vector<Tensor> heads;
    heads.reserve(cfg_.num_heads);
    for (std::size_t i = 0; i < cfg_.num_heads; ++i) {
      Tensor qi = chw_to_rows(slice(q, i * dh, dh));
      Tensor ki = chw_to_rows(slice(k, i * dh, dh));
      Tensor vi = chw_to_rows(slice(v, i * dh, dh));
      heads.push_back(rows_to_chw(linear_cross_attention(qi, ki, vi), h, w));
    }
    merged = concat(heads);
  }
  return out_(merged);
}

std::vector<std::size_t> Mhlca::argmax_keys(const Tensor& y, const Tensor& f_ref) const {
  TapeScope no_grad(nullptr);
  Tensor q = fq_(y);
  auto [k, v] = fkv_(f_ref);
  const std::size_t dh = cfg_.head_dim();
  const std::size_t lq = y.dim(1) * y.dim(2);
  const std::size_t lk = f_ref.dim(1) * f_ref.dim(2);
  std::vector<Tensor> qs, ks;
  for (std::size_t i = 0; i < cfg_.num_heads; ++i) {
    qs.push_back(softmax(chw_to_rows(slice(q, i * dh, dh)), 1));
    ks.push_back(softmax(chw_to_rows(slice(k, i * dh, dh)), 0));
  }
  std::vector<std::size_t> best(lq, 0);
  std::vector<double> row(lk);
  for (std::size_t l = 0; l < lq; ++l) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t hd = 0; hd < cfg_.num_heads; ++hd) {
      auto qv = qs[hd].values();
      auto kv = ks[hd].values();
      for (std::size_t j = 0; j < lk; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qv[l * dh + c] * kv[j * dh + c];
        row[j] += s;
      }
    }
    std::size_t arg = 0;
    for (std::size_t j = 1; j < lk; ++j)
      if (row[j] > row[arg]) arg = j;
    best[l] = arg;
  }
  return best;
}

std::uint64_t op_count(AttentionMode mode, std::uint64_t height, std::uint64_t width,
                       std::uint64_t dim) {
  const std::uint64_t hw = height * width;
  return mode == AttentionMode::kVanilla ? 2 * hw * hw * dim : 2 * hw * dim * dim;
}

double op_ratio(std::uint64_t height, std::uint64_t width, std::uint64_t dim) {
  return static_cast<double>(op_count(AttentionMode::kLinear, height, width, dim)) /
         static_cast<double>(op_count(AttentionMode::kVanilla, height, width, dim));
}

std::string to_string(AttentionMode mode) {
  return mode == AttentionMode::kVanilla ? "vanilla" : "linear";
}

std::vector<BenchRow> benchmark_attention(const std::vector<std::size_t>& lengths,
                                          std::size_t dim, std::size_t heads, std::size_t runs,
                                          std::uint64_t seed, bool include_vanilla) {
  AttentionConfig cfg{dim, heads};
  cfg.validate();
  const std::size_t dh = cfg.head_dim();
  TapeScope no_grad(nullptr);
  std::vector<BenchRow> rows;
  Rng rng(seed);
  auto random = [&](std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor(Shape{r, c}, std::move(v));
  };
  for (std::size_t len : lengths) {
    std::vector<Tensor> q, k, v;
    for (std::size_t h = 0; h < heads; ++h) {
      q.push_back(random(len, dh));
      k.push_back(random(len, dh));
      v.push_back(random(len, dh));
    }
    for (AttentionMode mode : {AttentionMode::kLinear, AttentionMode::kVanilla}) {
      if (mode == AttentionMode::kVanilla && !include_vanilla) continue;
      double checksum = 0.0;
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t r = 0; r < runs; ++r) {
        for (std::size_t h = 0; h < heads; ++h) {
          Tensor out = mode == AttentionMode::kLinear
                           ? linear_cross_attention(q[h], k[h], v[h])
                           : vanilla_cross_attention(q[h], k[h], v[h]).output;
          checksum += out.values()[0];
        }
      }
      const auto t1 = std::chrono::steady_clock::now();
      if (!std::isfinite(checksum)) throw std::runtime_error("benchmark produced non-finite output");
      const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
      rows.push_back({mode, len, dim, heads, heads * op_count(mode, len, 1, dh),
                      static_cast<std::uint64_t>(ns) / std::max<std::size_t>(runs, 1)});
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "mode,L,d,heads,mul_adds,wall_ns\n";
  for (const auto& r : rows) {
    os << to_string(r.mode) << ',' << r.length << ',' << r.dim << ',' << r.heads << ','
       << r.mul_adds << ',' << r.wall_ns << '\n';
  }
  return os.str();
}

}  // namespace nlvc
