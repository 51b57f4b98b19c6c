#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "nlvc/codec.hpp"
#include "nlvc/errors.hpp"
#include "nlvc/sequence_io.hpp"

using namespace nlvc;
using nlvc::testing::gradcheck;
using nlvc::testing::random_tensor;

namespace {

Sequence toy_sequence(std::size_t frames, std::size_t size = 16, std::uint64_t seed = 3) {
  SequenceSpec s;
  s.height = size;
  s.width = size;
  s.frames = frames;
  s.seed = seed;
  s.vx = 1.25;
  s.vy = -0.5;
  return generate(s);
}

}  // namespace

TEST_CASE("model config validation and JSON round trip") {
  ModelConfig c;
  c.variant = ContextVariant::kNonLocal;
  c.sigma_min = 0.07;
  ModelConfig back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  ModelConfig bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.sigma_min = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json({{"heads", "four"}}), ConfigError);
}

TEST_CASE("default toy model size and determinism of initialisation") {
  Model a{ModelConfig{}}, b{ModelConfig{}};
  CHECK(a.params().scalar_count() == 85663);
  for (std::size_t i = 0; i < a.params().entries().size(); ++i) {
    const auto va = a.params().entries()[i].tensor.values();
    const auto vb = b.params().entries()[i].tensor.values();
    CHECK(std::equal(va.begin(), va.end(), vb.begin(), vb.end()));
  }
  ModelConfig other;
  other.init_seed = 2;
  Model c(other);
  CHECK(c.params().entries()[0].tensor.value(0) != a.params().entries()[0].tensor.value(0));
  auto d = a.clone();
  CHECK(d->params().entries()[3].tensor.value(1) == a.params().entries()[3].tensor.value(1));
}

TEST_CASE("intra schedule") {
  CHECK(is_intra_frame(0, -1));
  CHECK_FALSE(is_intra_frame(95, -1));
  std::vector<std::size_t> intra;
  for (std::size_t t = 0; t < 96; ++t) {
    if (is_intra_frame(t, 32)) intra.push_back(t + 1);
  }
  CHECK(intra == std::vector<std::size_t>{1, 33, 65});
}

TEST_CASE("intra stub quantiser") {
  Tensor x(Shape{3, 4, 4}, 0.5);
  x.values()[0] = 1.0;
  x.values()[1] = 0.0;
  auto l0 = IntraStub::levels(x, 0);
  Tensor r0 = IntraStub::dequantize(l0, x.shape(), 0);
  CHECK(r0.value(0) == doctest::Approx(1.0));
  CHECK(r0.value(1) == doctest::Approx(0.0));
  CHECK(std::abs(r0.value(2) - 0.5) <= 0.5 / 255.0);
  auto l3 = IntraStub::levels(x, 3);
  Tensor r3 = IntraStub::dequantize(l3, x.shape(), 3);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(r3.value(i) - x.value(i)) <= 4.5 / 255.0 + 1e-12);
  CHECK(IntraStub::bits(48, 0) == doctest::Approx(384.0));
  CHECK(IntraStub::bits(48, 2) == doctest::Approx(96.0));
}

TEST_CASE("flow quantisation snaps to 1/16 pel") {
  MotionField v = MotionField::constant(4, 4, 0.33, -1.01);
  MotionField q = quantize_flow(v);
  CHECK(q.dx(1, 1) * kFlowPrecision == doctest::Approx(std::round(0.33 * kFlowPrecision)));
  CHECK(q.dy(0, 0) * kFlowPrecision == doctest::Approx(std::round(-1.01 * kFlowPrecision)));
}

TEST_CASE("inter coding shapes, and train mode noise is seeded") {
  Model m{ModelConfig{}};
  Sequence s = toy_sequence(3);
  TapeScope off(nullptr);
  CodecState st = m.code_intra(s.frames[0], 2).next;
  InterOutput a = m.code_inter(s.frames[1], s.flows[1], st, QuantMode::kTrain, 5);
  InterOutput b = m.code_inter(s.frames[1], s.flows[1], st, QuantMode::kTrain, 5);
  InterOutput c = m.code_inter(s.frames[1], s.flows[1], st, QuantMode::kTrain, 6);
  CHECK(a.bits.item() == b.bits.item());
  CHECK(a.bits.item() != c.bits.item());
  CHECK(a.recon.shape() == Shape{3, 16, 16});
  CHECK(a.feature.shape() == Shape{8, 16, 16});
  CHECK(a.latent.y.shape() == Shape{8, 4, 4});
  CHECK(m.latent_numel(16, 16) == 128);
  InterOutput e = m.code_inter(s.frames[1], s.flows[1], st, QuantMode::kEval);
  REQUIRE(e.latent.symbols.size() == 128);
  for (std::size_t i = 0; i < 128; ++i) {
    CHECK(e.latent.y_hat.value(i) ==
          doctest::Approx(static_cast<double>(e.latent.symbols[i]) + e.latent.mu.value(i)));
  }
  CHECK(e.next.previous_local.has_value());
  CHECK_THROWS_AS(m.code_inter(s.frames[1], s.flows[1], CodecState{}, QuantMode::kEval),
                  UsageError);
  CHECK_THROWS_AS(m.code_inter(Tensor(Shape{3, 10, 16}), s.flows[1], st, QuantMode::kEval),
                  DimensionError);
}

TEST_CASE("decoder rebuilds the encoder's state from symbols alone") {
  Model m{ModelConfig{}};
  jitter_parameters(m.params(), 0.02, 4);
  Sequence s = toy_sequence(4);
  TapeScope off(nullptr);
  CodecState enc_state = m.code_intra(s.frames[0], 2).next;
  CodecState dec_state = enc_state;
  for (std::size_t t = 1; t < 4; ++t) {
    MotionField v = quantize_flow(s.flows[t]);
    InterOutput e = m.code_inter(s.frames[t], v, enc_state, QuantMode::kEval);
    Conditioning cond = m.condition(dec_state, v);
    InterOutput d = m.decode_inter(e.latent.symbols, cond);
    for (std::size_t i = 0; i < e.recon.numel(); ++i) CHECK(d.recon.value(i) == e.recon.value(i));
    enc_state = e.next;
    dec_state = d.next;
  }
}

TEST_CASE("sequence bitstream round trip is exact for every variant and intra period") {
  for (auto variant : {ContextVariant::kBase, ContextVariant::kNonLocal, ContextVariant::kMultiFrame}) {
    ModelConfig cfg;
    cfg.variant = variant;
    Model m(cfg);
    jitter_parameters(m.params(), 0.02, 8);
    Sequence s = toy_sequence(5);
    for (int ip : {-1, 2}) {
      EncodeResult enc = encode_sequence(m, s.frames, s.flows, {ip, 2});
      DecodeResult dec = decode_sequence(m, enc.bitstream);
      REQUIRE(dec.frames.size() == 5);
      CHECK(dec.height == 16);
      for (std::size_t t = 0; t < 5; ++t) {
        CHECK((enc.frames[t].type == FrameType::kIntra) == is_intra_frame(t, ip));
        const auto a = enc.frames[t].recon.values(), b = dec.frames[t].recon.values();
        CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
        for (double v : a) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
      }
    }
  }
}

TEST_CASE("corrupted containers raise CodecError") {
  Model m{ModelConfig{}};
  Sequence s = toy_sequence(3);
  EncodeResult enc = encode_sequence(m, s.frames, s.flows, {-1, 2});
  auto bad_magic = enc.bitstream;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_sequence(m, bad_magic), CodecError);
  auto truncated = enc.bitstream;
  truncated.resize(truncated.size() - 3);
  CHECK_THROWS_AS(decode_sequence(m, truncated), CodecError);
  auto trailing = enc.bitstream;
  trailing.push_back(7);
  CHECK_THROWS_AS(decode_sequence(m, trailing), CodecError);
  auto flipped = enc.bitstream;
  flipped[flipped.size() - 6] ^= 0xFF;
  CHECK_THROWS_AS(decode_sequence(m, flipped), CodecError);
}

TEST_CASE("reported bits: actual from bytes, estimate from the model") {
  Model m{ModelConfig{}};
  Sequence s = toy_sequence(3);
  EncodeResult enc = encode_sequence(m, s.frames, s.flows, {-1, 2});
  CHECK(enc.frames[0].bits_actual == doctest::Approx(IntraStub::bits(3 * 16 * 16, 2)));
  for (std::size_t t = 1; t < 3; ++t) {
    CHECK(enc.frames[t].symbols == 128);
    CHECK(enc.frames[t].bits_actual > 0.0);
    CHECK(std::fmod(enc.frames[t].bits_actual, 8.0) == 0.0);
    CHECK(enc.frames[t].bits_estimated > 0.0);
  }
}

TEST_CASE("codec forward passes a sampled finite-difference check") {
  Model m{ModelConfig{}};
  jitter_parameters(m.params(), 0.02, 12);
  Sequence s = toy_sequence(3);
  Tensor x1 = s.frames[1].detach().set_requires_grad(true);
  std::vector<Tensor> inputs{x1};
  for (auto& e : m.params().entries()) inputs.push_back(e.tensor);
  auto loss = [&] {
    CodecState st = m.code_intra(s.frames[0], 2).next;
    InterOutput a = m.code_inter(x1, s.flows[1], st, QuantMode::kTrain, 1);
    InterOutput b = m.code_inter(s.frames[2], s.flows[2], a.next, QuantMode::kTrain, 2);
    Tensor r = scale(add(a.bits, b.bits), 1.0 / 256.0);
    return add(r, scale(add(mse(a.recon, s.frames[1]), mse(b.recon, s.frames[2])), 50.0));
  };
  nlvc::testing::GradCheckOptions opt;
  opt.h = 1e-5;
  opt.per_input = 2;
  opt.skip_kinks = true;
  // The loss is O(10); gradients below 1e-3 in norm are at the rounding floor.
  opt.norm_floor = 1e-3;
  auto r = gradcheck(loss, inputs, opt);
  CHECK(r.rel_error < 1e-4);
  CHECK(r.skipped * 10 < r.checked);
  MESSAGE("checked " << r.checked << ", skipped at kinks " << r.skipped);
}
