#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nlvc/checkpoint.hpp"
#include "nlvc/errors.hpp"
#include "nlvc/hash.hpp"
#include "nlvc/training.hpp"

using namespace nlvc;
namespace fs = std::filesystem;

namespace {

Sequence toy(std::size_t frames, std::uint64_t seed = 5) {
  SequenceSpec s;
  s.height = 16;
  s.width = 16;
  s.frames = frames;
  s.seed = seed;
  s.vx = 0.75;
  s.vy = 0.5;
  return generate(s);
}

std::vector<double> flat_params(const Model& m) {
  std::vector<double> out;
  for (const auto& e : m.params().entries()) {
    const auto v = e.tensor.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("nlvc_test_training_" + name);
}

}  // namespace

TEST_CASE("equal group boundaries") {
  CHECK(equal_boundaries(30, 3) == std::vector<std::size_t>{0, 10, 20, 30});
  CHECK(equal_boundaries(7, 1) == std::vector<std::size_t>{0, 7});
  CHECK(equal_boundaries(7, 7) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
  for (std::size_t T = 1; T <= 40; ++T) {
    for (std::size_t G = 1; G <= T; ++G) {
      auto b = equal_boundaries(T, G);
      REQUIRE(b.size() == G + 1);
      CHECK(b.front() == 0);
      CHECK(b.back() == T);
      for (std::size_t j = 0; j < G; ++j) {
        CHECK(b[j] < b[j + 1]);
        CHECK(std::abs(static_cast<double>(b[j]) - static_cast<double>(j * T) / G) <= 0.5);
      }
    }
  }
  CHECK_THROWS_AS(equal_boundaries(3, 4), ConfigError);
  CHECK_THROWS_AS(equal_boundaries(3, 0), ConfigError);
}

TEST_CASE("train config validation and JSON") {
  TrainConfig c;
  c.frames = 12;
  c.groups = 3;
  c.strategy = Strategy::kPcfsShifted;
  c.shift = 2;
  CHECK_NOTHROW(c.validate());
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
  TrainConfig bad = c;
  bad.boundaries = {0, 5, 5, 12};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.boundaries = {0, 4, 12};
  bad.shift = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.crop = 10;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(parse_strategy("pcfs-shifted") == Strategy::kPcfsShifted);
  CHECK_THROWS_AS(parse_strategy("greedy"), ConfigError);
}

TEST_CASE("fine-tuning length presets") {
  auto p = finetune_length_presets();
  REQUIRE(p.size() == 4);
  CHECK(p[0].frames == 6);
  CHECK(p[2].frames == 38);
  CHECK(p[2].groups == 2);
  CHECK(p[3].frames == 55);
  CHECK(p[3].groups == 3);
}

TEST_CASE("Adam matches a hand-computed first step and minimises a quadratic") {
  std::vector<double> x{1.0, -2.0};
  AdamState st;
  std::vector<double> g{0.5, -4.0};
  adam_update(x, g, st, 0.1);
  // Bias-corrected first step moves each coordinate by lr·sign(g).
  CHECK(x[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(x[1] == doctest::Approx(-1.9).epsilon(1e-7));
  for (int i = 0; i < 2000; ++i) {
    g = {2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)};
    adam_update(x, g, st, 0.05);
  }
  CHECK(x[0] == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(x[1] == doctest::Approx(-1.0).epsilon(1e-3));
}

TEST_CASE("cascaded loss sums per-frame rate and distortion") {
  Model m{ModelConfig{}};
  Sequence s = toy(4);
  TapeScope off(nullptr);
  GroupResult g = cascaded_loss(m, s, 64.0, 3, 2, 9);
  REQUIRE(g.frames.size() == 3);
  double expect = 0.0;
  for (const auto& f : g.frames) expect += f.bpp + 64.0 * f.mse;
  CHECK(g.loss.item() == doctest::Approx(expect));
  CHECK(g.rate == doctest::Approx(g.frames[0].bpp + g.frames[1].bpp + g.frames[2].bpp));
  // Split coding reproduces the cascaded forward exactly.
  CodecState st = intra_state(m, s, 2);
  GroupResult a = code_frames(m, s, 1, 2, st, 64.0, 9);
  GroupResult b = code_frames(m, s, 3, 3, a.state, 64.0, 9);
  CHECK(a.loss.item() + b.loss.item() == doctest::Approx(g.loss.item()).epsilon(1e-12));
}

TEST_CASE("PCFS with one group is bit-identical to cascaded training") {
  Sequence data = toy(8);
  TrainConfig c;
  c.frames = 4;
  c.steps = 3;
  c.lambda = 128.0;
  Model a{ModelConfig{}}, b{ModelConfig{}};
  auto ra = train(a, data, c);
  c.strategy = Strategy::kPcfs;
  c.groups = 1;
  auto rb = train(b, data, c);
  CHECK(flat_params(a) == flat_params(b));
  for (std::size_t i = 0; i < ra.size(); ++i) CHECK(ra[i].loss == rb[i].loss);
}

TEST_CASE("PCFS groups are disconnected and shrink the live graph") {
  Sequence data = toy(13);
  Sequence sample = data.window(0, 13);
  TrainConfig c;
  c.frames = 12;
  c.lambda = 128.0;
  Model m1{ModelConfig{}}, m3{ModelConfig{}};
  Adam o1(c.lr), o3(c.lr);
  StepReport one = train_step(m1, o1, sample, c, 3);
  c.strategy = Strategy::kPcfs;
  c.groups = 3;
  StepReport three = train_step(m3, o3, sample, c, 3);
  CHECK(three.updates == 3);
  CHECK(three.cross_edges == 0);
  CHECK(one.cross_edges == 0);
  CHECK(static_cast<double>(three.peak_tape) <= 0.45 * static_cast<double>(one.peak_tape));
  c.strategy = Strategy::kPcfsShifted;
  c.shift = 2;
  Model ms{ModelConfig{}};
  Adam os(c.lr);
  StepReport shifted = train_step(ms, os, sample, c, 3);
  CHECK(shifted.updates == 3);
  CHECK(shifted.cross_edges == 0);
  CHECK(shifted.peak_tape > three.peak_tape);
}

TEST_CASE("training is deterministic for a fixed seed") {
  Sequence data = toy(6);
  TrainConfig c;
  c.frames = 2;
  c.steps = 2;
  c.crop = 8;
  Model a{ModelConfig{}}, b{ModelConfig{}}, d{ModelConfig{}};
  train(a, data, c);
  train(b, data, c);
  CHECK(flat_params(a) == flat_params(b));
  c.seed = 2;
  train(d, data, c);
  CHECK(flat_params(a) != flat_params(d));
}

TEST_CASE("evaluation and the noise probe") {
  Model m{ModelConfig{}};
  jitter_parameters(m.params(), 0.02, 3);
  Sequence s = toy(6);
  EvalReport e = evaluate(m, s, 64.0, 2);
  REQUIRE(e.frames.size() == 6);
  double bpp = 0.0;
  for (std::size_t t = 1; t < 6; ++t) bpp += e.frames[t].bpp;
  CHECK(e.mean_bpp == doctest::Approx(bpp / 5.0));
  ProbeReport quiet = noise_probe(m, s, 2, 0.0, 1, 2);
  REQUIRE(quiet.rows.size() == 6);
  CHECK(quiet.rows[0].frame == 1);
  for (const auto& r : quiet.rows) {
    CHECK(r.bpp_delta() == 0.0);
    CHECK(r.psnr_delta() == 0.0);
  }
  ProbeReport loud = noise_probe(m, s, 2, 1.0, 1, 2);
  // Frames up to and including the injection point are untouched.
  CHECK(loud.rows[1].bpp_delta() == 0.0);
  CHECK(loud.rows[2].bpp_delta() != 0.0);
  CHECK_THROWS_AS(noise_probe(m, s, 0, 1.0, 1, 2), InputError);
  CHECK_THROWS_AS(noise_probe(m, s, 6, 1.0, 1, 2), InputError);
}

TEST_CASE("checkpoints round trip and reject damage") {
  ModelConfig mc;
  mc.variant = ContextVariant::kNonLocal;
  Model m(mc);
  jitter_parameters(m.params(), 0.05, 6);
  const fs::path p = temp_path("ckpt.bin");
  save_checkpoint(p, m, {{"note", "x"}});
  LoadedCheckpoint back = load_checkpoint(p);
  CHECK(flat_params(*back.model) == flat_params(m));
  CHECK(back.header["extra"]["note"] == "x");
  CHECK(back.header["config_hash"] == config_hash(mc.to_json()));

  std::ifstream in(p, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  auto write = [&](const std::vector<char>& b) {
    std::ofstream o(p, std::ios::binary | std::ios::trunc);
    o.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto bad = bytes;
  bad[0] = 'X';
  write(bad);
  CHECK_THROWS_AS(load_checkpoint(p), IoError);
  bad = bytes;
  bad.resize(bad.size() - 8);
  write(bad);
  CHECK_THROWS_AS(load_checkpoint(p), IoError);
  bad = bytes;
  bad.push_back(0);
  write(bad);
  CHECK_THROWS_AS(load_checkpoint(p), IoError);
  fs::remove(p);
  CHECK_THROWS_AS(load_checkpoint(p), IoError);
}

TEST_CASE("training log CSV") {
  std::vector<StepReport> steps(3);
  for (std::size_t i = 0; i < 3; ++i) {
    steps[i].step = i;
    steps[i].loss = 1.0 + i;
    steps[i].rate = 0.1 * i;
    steps[i].distortion = 0.01;
  }
  const fs::path p = temp_path("log.csv");
  write_training_log(p, steps, "abc");
  ResultTable t = read_results(p);
  CHECK(t.config_hash == "abc");
  CHECK(t.columns == std::vector<std::string>{"step", "loss", "rate", "distortion"});
  REQUIRE(t.rows.size() == 3);
  CHECK(std::stod(t.rows[2][1]) == doctest::Approx(3.0));
  fs::remove(p);
}
