#include "nlvc/codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace nlvc {

// ---- config ---------------------------------------------------------------

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(feature_channels, "feature_channels");
  positive(latent_channels, "latent_channels");
  positive(heads, "heads");
  positive(offset_groups, "offset_groups");
  for (std::size_t c : ladder_channels) positive(c, "ladder_channels");
  for (std::size_t c : context_channels) {
    positive(c, "context_channels");
    if (c % heads != 0) {
      throw ConfigError("context channels (" + std::to_string(c) +
                        ") must be a multiple of heads (" + std::to_string(heads) + ")");
    }
  }
  if (!(sigma_min > 0.0)) throw ConfigError("sigma_min must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope out of range");
  if (!(offset_radius >= 0.0)) throw ConfigError("offset_radius must be non-negative");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"feature_channels", feature_channels},
          {"context_channels", context_channels},
          {"ladder_channels", ladder_channels},
          {"latent_channels", latent_channels},
          {"heads", heads},
          {"offset_groups", offset_groups},
          {"offset_radius", offset_radius},
          {"leaky_slope", leaky_slope},
          {"sigma_min", sigma_min},
          {"variant", to_string(variant)},
          {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.feature_channels = j.value("feature_channels", c.feature_channels);
    c.context_channels = j.value("context_channels", c.context_channels);
    c.ladder_channels = j.value("ladder_channels", c.ladder_channels);
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.heads = j.value("heads", c.heads);
    c.offset_groups = j.value("offset_groups", c.offset_groups);
    c.offset_radius = j.value("offset_radius", c.offset_radius);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.sigma_min = j.value("sigma_min", c.sigma_min);
    c.variant = parse_context_variant(j.value("variant", to_string(c.variant)));
    c.init_seed = j.value("init_seed", c.init_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- state ----------------------------------------------------------------

CodecState CodecState::detached() const {
  CodecState s;
  if (feature.defined()) s.feature = feature.detach();
  if (previous_pyramid) {
    MultiScaleFeatures p;
    for (std::size_t i = 0; i < kNumScales; ++i) p.f[i] = previous_pyramid->f[i].detach();
    s.previous_pyramid = p;
  }
  if (previous_local) {
    std::array<Tensor, kNumScales> l;
    for (std::size_t i = 0; i < kNumScales; ++i) l[i] = (*previous_local)[i].detach();
    s.previous_local = l;
  }
  return s;
}

// ---- model ----------------------------------------------------------------

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.init_seed);
  const auto& c = cfg_.context_channels;
  const auto& h = cfg_.ladder_channels;
  const std::size_t fc = cfg_.feature_channels, lc = cfg_.latent_channels;
  const double slope = cfg_.leaky_slope;

  intra_embed_ = Conv2d(store_, "intra.embed", 3, fc, 3, rng);
  ref_pyramid_ = PyramidBuilder(store_, "ref.pyramid", fc, c, rng);

  const std::array<std::size_t, kNumScales> enc_query{3, h[0], h[1]};
  const std::array<std::size_t, kNumScales> dec_query{h[0], h[1], lc};
  for (std::size_t i = 0; i < kNumScales; ++i) {
    const std::string s = "s" + std::to_string(i);
    od_[i] = OffsetDiversity(store_, s + ".od", c[i],
                             OffsetDiversityConfig{cfg_.offset_groups, cfg_.offset_radius}, rng,
                             slope);
    refine_[i] = MultiScaleRefine(store_, s + ".refine", c[i], rng, slope);
    const AttentionConfig ac{c[i], cfg_.heads};
    enc_attention_[i] = Mhlca(store_, s + ".enc_attn", enc_query[i], c[i], ac, rng, slope);
    dec_attention_[i] = Mhlca(store_, s + ".dec_attn", dec_query[i], c[i], ac, rng, slope);
  }

  enc_fuse_[0] = Fusion(store_, "enc.fuse0", 3, c[0], h[0], true, rng, slope);
  enc_fuse_[1] = Fusion(store_, "enc.fuse1", h[0], c[1], h[1], true, rng, slope);
  enc_fuse_[2] = Fusion(store_, "enc.fuse2", h[1], c[2], lc, false, rng, slope);

  dec_fuse_[2] = Fusion(store_, "dec.fuse2", lc, c[2], h[1], true, rng, slope);
  dec_fuse_[1] = Fusion(store_, "dec.fuse1", h[1], c[1], h[0], true, rng, slope);
  dec_fuse_[0] = Fusion(store_, "dec.fuse0", h[0], c[0], fc, false, rng, slope);
  dec_out_ = ResBlock(store_, "dec.out", fc, rng, slope);
  recon_ = Conv2d(store_, "recon", fc, 3, 3, rng);

  prior_hidden_ = Conv2d(store_, "prior.hidden", 2 * c[2], h[1], 3, rng);
  prior_out_ = Conv2d(store_, "prior.out", h[1], 2 * lc, 3, rng);
}

std::unique_ptr<Model> Model::clone() const {
  auto m = std::make_unique<Model>(cfg_);
  m->store_.copy_values_from(store_);
  return m;
}

void Model::check_frame(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(0) != 3 || x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0) {
    throw DimensionError("frame must be 3×H×W with H, W divisible by 4, got " +
                         shape_str(x.shape()));
  }
}

std::size_t Model::latent_numel(std::size_t height, std::size_t width) const {
  return cfg_.latent_channels * (height / 4) * (width / 4);
}

MultiScaleFeatures Model::pyramid(const Tensor& feature) const { return ref_pyramid_(feature); }

Conditioning Model::condition(const CodecState& state, const MotionField& v) const {
  if (state.empty()) throw UsageError("inter frame coded without a reference");
  if (state.feature.dim(1) != v.height() || state.feature.dim(2) != v.width()) {
    throw DimensionError("motion field " + shape_str(v.tensor().shape()) +
                         " does not match reference " + shape_str(state.feature.shape()));
  }
  Conditioning cond;
  auto flows = flow_pyramid(v, kNumScales);
  for (std::size_t i = 0; i < kNumScales; ++i) cond.flows[i] = flows[i];
  cond.ref1 = pyramid(state.feature);
  cond.ref2_available = state.previous_pyramid.has_value();
  cond.ref2 = cond.ref2_available ? *state.previous_pyramid : cond.ref1;
  for (std::size_t i = 0; i < kNumScales; ++i) {
    std::optional<Tensor> prev;
    if (state.previous_local) prev = (*state.previous_local)[i];
    cond.local[i] = mine_local(od_[i], refine_[i], cond.ref1.f[i], prev, cond.flows[i],
                               cfg_.variant);
  }
  const LocalContexts& l2 = cond.local[kNumScales - 1];
  Tensor p = prior_out_(leaky_relu(prior_hidden_(concat({l2.cl_ref1, l2.cl_ref2})),
                                   cfg_.leaky_slope));
  const std::size_t lc = cfg_.latent_channels;
  cond.mu = slice(p, 0, lc);
  cond.sigma = positive_scale(slice(p, lc, lc), cfg_.sigma_min);
  return cond;
}

ContextSet Model::contexts_at(std::size_t scale, const Tensor& query, const Mhlca& attention,
                              const Conditioning& cond) const {
  std::optional<Tensor> ref2;
  if (cond.ref2_available) ref2 = cond.ref2.f[scale];
  return mine_contexts(query, attention, cond.ref1.f[scale], ref2, cond.local[scale],
                       cfg_.variant);
}

Tensor Model::analysis(const Tensor& x, const Conditioning& cond) const {
  Tensor h = enc_fuse_[0](x, contexts_at(0, x, enc_attention_[0], cond));
  h = down2(h);
  h = enc_fuse_[1](h, contexts_at(1, h, enc_attention_[1], cond));
  h = down2(h);
  return enc_fuse_[2](h, contexts_at(2, h, enc_attention_[2], cond));
}

Tensor Model::synthesis(const Tensor& y_hat, const Conditioning& cond) const {
  Tensor h = dec_fuse_[2](y_hat, contexts_at(2, y_hat, dec_attention_[2], cond));
  h = up2(h);
  h = dec_fuse_[1](h, contexts_at(1, h, dec_attention_[1], cond));
  h = up2(h);
  h = dec_fuse_[0](h, contexts_at(0, h, dec_attention_[0], cond));
  return dec_out_(h);
}

Tensor Model::reconstruct(const Tensor& feature) const { return recon_(feature); }

Tensor Model::intra_feature(const Tensor& recon) const { return intra_embed_(recon); }

CodecState Model::advance(const Conditioning& cond, const Tensor& feature) const {
  CodecState next;
  next.feature = feature;
  next.previous_pyramid = cond.ref1;
  std::array<Tensor, kNumScales> local;
  for (std::size_t i = 0; i < kNumScales; ++i) local[i] = cond.local[i].cl_ref1;
  next.previous_local = local;
  return next;
}

InterOutput Model::code_inter(const Tensor& x, const MotionField& v, const CodecState& state,
                              QuantMode mode, std::uint64_t noise_seed) const {
  check_frame(x);
  return code_inter(x, condition(state, v), mode, noise_seed);
}

InterOutput Model::code_inter(const Tensor& x, const Conditioning& cond, QuantMode mode,
                              std::uint64_t noise_seed) const {
  check_frame(x);
  InterOutput out;
  out.latent.y = analysis(x, cond);
  out.latent.mu = cond.mu;
  out.latent.sigma = cond.sigma;
  const std::size_t n = out.latent.y.numel();
  auto yv = out.latent.y.values();
  auto mv = cond.mu.values();
  if (mode == QuantMode::kTrain) {
    Rng rng(noise_seed);
    std::vector<double> u(n);
    for (double& e : u) e = rng.uniform(-0.5, 0.5);
    out.latent.y_hat = add(out.latent.y, Tensor(out.latent.y.shape(), std::move(u)));
  } else {
    out.latent.symbols.resize(n);
    std::vector<double> q(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = std::nearbyint(yv[i] - mv[i]);
      out.latent.symbols[i] = static_cast<std::int64_t>(r);
      q[i] = r + mv[i];
    }
    out.latent.y_hat = Tensor(out.latent.y.shape(), std::move(q));
  }
  out.bits = gaussian_bits(out.latent.y_hat, cond.mu, cond.sigma);
  out.feature = synthesis(out.latent.y_hat, cond);
  out.recon = reconstruct(out.feature);
  out.next = advance(cond, out.feature);
  return out;
}

InterOutput Model::decode_inter(std::span<const std::int64_t> symbols,
                                const Conditioning& cond) const {
  const std::size_t n = cond.mu.numel();
  if (symbols.size() != n) throw CodecError("latent symbol count mismatch");
  auto mv = cond.mu.values();
  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = static_cast<double>(symbols[i]) + mv[i];
  InterOutput out;
  out.latent.mu = cond.mu;
  out.latent.sigma = cond.sigma;
  out.latent.symbols.assign(symbols.begin(), symbols.end());
  out.latent.y_hat = Tensor(cond.mu.shape(), std::move(q));
  out.bits = gaussian_bits(out.latent.y_hat, cond.mu, cond.sigma);
  out.feature = synthesis(out.latent.y_hat, cond);
  out.recon = reconstruct(out.feature);
  out.next = advance(cond, out.feature);
  return out;
}

IntraOutput Model::code_intra(const Tensor& x, int q) const {
  check_frame(x);
  IntraOutput out;
  out.levels = IntraStub::levels(x, q);
  out.recon = IntraStub::dequantize(out.levels, x.shape(), q);
  out.bits = IntraStub::bits(x.numel(), q);
  out.feature = intra_feature(out.recon);
  out.next.feature = out.feature;
  return out;
}

IntraOutput Model::decode_intra(std::span<const std::uint8_t> levels, std::size_t height,
                                std::size_t width, int q) const {
  IntraOutput out;
  out.levels.assign(levels.begin(), levels.end());
  out.recon = IntraStub::dequantize(levels, Shape{3, height, width}, q);
  out.bits = IntraStub::bits(levels.size(), q);
  out.feature = intra_feature(out.recon);
  out.next.feature = out.feature;
  return out;
}

// ---- intra stub -----------------------------------------------------------

namespace {

void check_quality(int q) {
  if (q < 0 || q > IntraStub::kMaxQuality) {
    throw ConfigError("intra quality must be in [0, 7], got " + std::to_string(q));
  }
}

}  // namespace

std::vector<std::uint8_t> IntraStub::levels(const Tensor& x, int q) {
  check_quality(q);
  auto v = x.values();
  std::vector<std::uint8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const long p = std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0);
    out[i] = static_cast<std::uint8_t>(p >> q);
  }
  return out;
}

Tensor IntraStub::dequantize(std::span<const std::uint8_t> levels, const Shape& shape, int q) {
  check_quality(q);
  if (levels.size() != shape_numel(shape)) throw CodecError("intra level count mismatch");
  const int step = 1 << q;
  std::vector<double> out(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const int p = q == 0 ? levels[i] : std::min(levels[i] * step + step / 2, 255);
    out[i] = p / 255.0;
  }
  return Tensor(shape, std::move(out));
}

double IntraStub::bits(std::size_t samples, int q) {
  check_quality(q);
  return 8.0 * static_cast<double>(samples) / static_cast<double>(1 << q);
}

// ---- bitstream ------------------------------------------------------------

namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> d) : d_(d) {}
  std::uint8_t u8() {
    need(1);
    return d_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(d_[pos_] | (d_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(d_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = d_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> rest() { return bytes(d_.size() - pos_); }
  bool done() const { return pos_ == d_.size(); }

 private:
  void need(std::size_t n) const {
    if (d_.size() - pos_ < n) throw CodecError("bitstream truncated");
  }
  std::span<const std::uint8_t> d_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> pack_levels(std::span<const std::uint8_t> levels, unsigned bits) {
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  unsigned filled = 0;
  for (std::uint8_t v : levels) {
    acc = (acc << bits) | v;
    filled += bits;
    while (filled >= 8) {
      filled -= 8;
      out.push_back(static_cast<std::uint8_t>(acc >> filled));
    }
    acc &= (1u << filled) - 1;
  }
  if (filled > 0) out.push_back(static_cast<std::uint8_t>(acc << (8 - filled)));
  return out;
}

std::vector<std::uint8_t> unpack_levels(std::span<const std::uint8_t> bytes, unsigned bits,
                                        std::size_t count) {
  if (bytes.size() != (count * bits + 7) / 8) throw CodecError("intra payload size mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(count);
  std::uint32_t acc = 0;
  unsigned filled = 0;
  std::size_t pos = 0;
  while (out.size() < count) {
    while (filled < bits) {
      acc = (acc << 8) | bytes[pos++];
      filled += 8;
    }
    filled -= bits;
    out.push_back(static_cast<std::uint8_t>(acc >> filled));
    acc &= (1u << filled) - 1;
  }
  return out;
}

Tensor clamp01(const Tensor& x) {
  std::vector<double> v(x.values().begin(), x.values().end());
  for (double& e : v) e = std::clamp(e, 0.0, 1.0);
  return Tensor(x.shape(), std::move(v));
}

void put_flow(std::vector<std::uint8_t>& b, const MotionField& v) {
  for (double d : v.tensor().values()) {
    const long q = std::lround(d * kFlowPrecision);
    put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
}

MotionField get_flow(ByteReader& r, std::size_t height, std::size_t width) {
  std::vector<double> v(2 * height * width);
  for (double& d : v) d = static_cast<std::int16_t>(r.u16()) / kFlowPrecision;
  try {
    return MotionField(Tensor(Shape{2, height, width}, std::move(v)));
  } catch (const InputError& e) {
    throw CodecError(std::string("flow side info: ") + e.what());
  }
}

}  // namespace

bool is_intra_frame(std::size_t index, int intra_period) {
  if (index == 0) return true;
  return intra_period > 0 && index % static_cast<std::size_t>(intra_period) == 0;
}

MotionField quantize_flow(const MotionField& v) {
  std::vector<double> q(v.tensor().values().begin(), v.tensor().values().end());
  constexpr double kLimit = 32767.0 / kFlowPrecision;
  for (double& d : q) {
    if (std::abs(d) > kLimit) throw InputError("flow exceeds transmissible range");
    d = static_cast<double>(std::lround(d * kFlowPrecision)) / kFlowPrecision;
  }
  return MotionField(Tensor(v.tensor().shape(), std::move(q)));
}

std::pair<LatentPlan, CodedFrame> encode_frame(const Model& model, const Tensor& x,
                                               const MotionField& v, CodecState& state,
                                               const LatentCoder& coder) {
  TapeScope no_grad(nullptr);
  const MotionField vq = quantize_flow(v);
  InterOutput out = model.code_inter(x, vq, state, QuantMode::kEval);
  auto sigma = out.latent.sigma.values();
  std::vector<std::uint8_t> latent =
      coder.encode(out.latent.symbols, std::vector<double>(sigma.begin(), sigma.end()));
  CodedFrame cf;
  cf.type = FrameType::kInter;
  cf.payload.push_back(static_cast<std::uint8_t>(FrameType::kInter));
  put_flow(cf.payload, vq);
  cf.payload.insert(cf.payload.end(), latent.begin(), latent.end());
  cf.bits_actual = 8.0 * static_cast<double>(latent.size());
  cf.bits_estimated = out.bits.item();
  cf.symbols = out.latent.symbols.size();
  cf.recon = clamp01(out.recon);
  cf.feature = out.feature;
  state = out.next;
  return {std::move(out.latent), std::move(cf)};
}

CodedFrame encode_intra_frame(const Model& model, const Tensor& x, int q, CodecState& state) {
  TapeScope no_grad(nullptr);
  IntraOutput out = model.code_intra(x, q);
  CodedFrame cf;
  cf.type = FrameType::kIntra;
  cf.payload.push_back(static_cast<std::uint8_t>(FrameType::kIntra));
  cf.payload.push_back(static_cast<std::uint8_t>(q));
  auto packed = pack_levels(out.levels, static_cast<unsigned>(8 - q));
  cf.payload.insert(cf.payload.end(), packed.begin(), packed.end());
  cf.bits_actual = out.bits;
  cf.bits_estimated = out.bits;
  cf.symbols = out.levels.size();
  cf.recon = out.recon;
  cf.feature = out.feature;
  state = out.next;
  return cf;
}

CodedFrame decode_frame(const Model& model, std::span<const std::uint8_t> payload,
                        std::size_t height, std::size_t width, CodecState& state,
                        const LatentCoder& coder) {
  TapeScope no_grad(nullptr);
  ByteReader r(payload);
  const std::uint8_t type = r.u8();
  CodedFrame cf;
  if (type == static_cast<std::uint8_t>(FrameType::kIntra)) {
    const int q = r.u8();
    if (q > IntraStub::kMaxQuality) throw CodecError("intra quality out of range");
    const std::size_t count = 3 * height * width;
    auto levels = unpack_levels(r.rest(), static_cast<unsigned>(8 - q), count);
    IntraOutput out = model.decode_intra(levels, height, width, q);
    cf.type = FrameType::kIntra;
    cf.bits_actual = cf.bits_estimated = out.bits;
    cf.symbols = count;
    cf.recon = out.recon;
    cf.feature = out.feature;
    state = out.next;
  } else if (type == static_cast<std::uint8_t>(FrameType::kInter)) {
    if (state.empty()) throw CodecError("inter frame before any intra frame");
    const MotionField v = get_flow(r, height, width);
    auto latent = r.rest();
    Conditioning cond = model.condition(state, v);
    auto sigma = cond.sigma.values();
    auto symbols = coder.decode(latent, std::vector<double>(sigma.begin(), sigma.end()));
    InterOutput out = model.decode_inter(symbols, cond);
    cf.type = FrameType::kInter;
    cf.bits_actual = 8.0 * static_cast<double>(latent.size());
    cf.bits_estimated = out.bits.item();
    cf.symbols = symbols.size();
    cf.recon = clamp01(out.recon);
    cf.feature = out.feature;
    state = out.next;
  } else {
    throw CodecError("unknown frame type " + std::to_string(type));
  }
  cf.payload.assign(payload.begin(), payload.end());
  return cf;
}

EncodeResult encode_sequence(const Model& model, const std::vector<Tensor>& frames,
                             const std::vector<MotionField>& flows, const CodingOptions& opts) {
  if (frames.empty()) throw InputError("empty sequence");
  if (flows.size() != frames.size()) throw InputError("one flow field per frame required");
  const std::size_t h = frames[0].dim(1), w = frames[0].dim(2);
  if (h > 0xFFFF || w > 0xFFFF) throw InputError("frame too large for container");
  EncodeResult res;
  auto& b = res.bitstream;
  b.insert(b.end(), {'N', 'L', 'V', 'C'});
  b.push_back(kBitstreamVersion);
  put_u16(b, static_cast<std::uint16_t>(h));
  put_u16(b, static_cast<std::uint16_t>(w));
  put_u32(b, static_cast<std::uint32_t>(frames.size()));
  CodecState state;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].shape() != frames[0].shape()) throw InputError("inconsistent frame sizes");
    CodedFrame cf = is_intra_frame(t, opts.intra_period)
                        ? encode_intra_frame(model, frames[t], opts.intra_q, state)
                        : encode_frame(model, frames[t], flows[t], state).second;
    put_u32(b, static_cast<std::uint32_t>(cf.payload.size()));
    b.insert(b.end(), cf.payload.begin(), cf.payload.end());
    res.frames.push_back(std::move(cf));
  }
  return res;
}

DecodeResult decode_sequence(const Model& model, std::span<const std::uint8_t> bitstream) {
  ByteReader r(bitstream);
  auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), "NLVC", 4) != 0) throw CodecError("bad magic");
  if (r.u8() != kBitstreamVersion) throw CodecError("unsupported bitstream version");
  DecodeResult res;
  res.height = r.u16();
  res.width = r.u16();
  const std::uint32_t count = r.u32();
  if (res.height == 0 || res.width == 0 || res.height % 4 || res.width % 4) {
    throw CodecError("bad frame extents in header");
  }
  CodecState state;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t len = r.u32();
    res.frames.push_back(decode_frame(model, r.bytes(len), res.height, res.width, state));
  }
  if (!r.done()) throw CodecError("trailing bytes after last frame");
  return res;
}

}  // namespace nlvc
