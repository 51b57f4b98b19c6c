#include "nlvc/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "nlvc/metrics.hpp"

namespace nlvc {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kCascaded:
      return "cascaded";
    case Strategy::kPcfs:
      return "pcfs";
    case Strategy::kPcfsShifted:
      return "pcfs-shifted";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "cascaded") return Strategy::kCascaded;
  if (s == "pcfs") return Strategy::kPcfs;
  if (s == "pcfs-shifted") return Strategy::kPcfsShifted;
  throw ConfigError("unknown strategy '" + s + "' (cascaded | pcfs | pcfs-shifted)");
}

std::vector<std::size_t> equal_boundaries(std::size_t frames, std::size_t groups) {
  if (groups == 0 || groups > frames) {
    throw ConfigError("cannot split " + std::to_string(frames) + " frames into " +
                      std::to_string(groups) + " groups");
  }
  std::vector<std::size_t> b(groups + 1);
  for (std::size_t j = 0; j <= groups; ++j) b[j] = (2 * j * frames + groups) / (2 * groups);
  return b;
}

std::vector<SchedulePreset> finetune_length_presets() { return {{6, 1}, {20, 1}, {38, 2}, {55, 3}}; }

std::vector<std::size_t> TrainConfig::resolved_boundaries() const {
  return boundaries.empty() ? equal_boundaries(frames, groups) : boundaries;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (frames == 0) throw ConfigError("frames must be positive");
  if (intra_q < 0 || intra_q > IntraStub::kMaxQuality) throw ConfigError("intra_q out of range");
  if (crop != 0 && (crop % 4 != 0)) throw ConfigError("crop must be a multiple of 4");
  const auto b = resolved_boundaries();
  if (b.size() < 2 || b.front() != 0 || b.back() != frames) {
    throw ConfigError("group boundaries must start at 0 and end at T = " +
                      std::to_string(frames));
  }
  for (std::size_t i = 1; i < b.size(); ++i) {
    if (b[i] <= b[i - 1]) throw ConfigError("group boundaries must be strictly increasing");
  }
  if (strategy == Strategy::kPcfsShifted) {
    if (shift == 0) throw ConfigError("pcfs-shifted needs shift >= 1");
    for (std::size_t i = 1; i + 1 < b.size(); ++i) {
      if (shift > b[i] - b[i - 1]) throw ConfigError("shift longer than a group");
    }
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lambda", lambda},         {"frames", frames},   {"groups", groups},
          {"boundaries", boundaries}, {"lr", lr},           {"seed", seed},
          {"steps", steps},           {"strategy", to_string(strategy)},
          {"intra_q", intra_q},       {"crop", crop},       {"shift", shift}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.lambda = j.value("lambda", c.lambda);
    c.frames = j.value("frames", c.frames);
    c.groups = j.value("groups", c.groups);
    c.boundaries = j.value("boundaries", c.boundaries);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.steps = j.value("steps", c.steps);
    c.strategy = parse_strategy(j.value("strategy", to_string(c.strategy)));
    c.intra_q = j.value("intra_q", c.intra_q);
    c.crop = j.value("crop", c.crop);
    c.shift = j.value("shift", c.shift);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- Adam -------------------------------------------------------------------

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state,
                 double lr) {
  if (params.size() != grads.size()) throw DimensionError("adam: parameter/gradient size mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * g;
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * g * g;
    const double mh = state.m[i] / c1, vh = state.v[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + kAdamEps);
  }
}

void Adam::step(ParameterStore& params) {
  auto& entries = params.entries();
  if (state_.size() != entries.size()) state_.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].tensor;
    const std::vector<double> g = p.grad();
    adam_update(p.values(), g, state_[i], lr_);
  }
  ++updates_;
}

// ---- losses -----------------------------------------------------------------

CodecState intra_state(const Model& model, const Sequence& seq, int intra_q) {
  return model.code_intra(seq.frames.at(0), intra_q).next;
}

GroupResult code_frames(const Model& model, const Sequence& seq, std::size_t first,
                        std::size_t last, const CodecState& state, double lambda,
                        std::uint64_t noise_seed) {
  if (first == 0 || last < first || last >= seq.size()) {
    throw InputError("code_frames: frames [" + std::to_string(first) + ", " +
                     std::to_string(last) + "] outside a " + std::to_string(seq.size()) +
                     "-frame sequence");
  }
  const double pixels = static_cast<double>(seq.height() * seq.width());
  GroupResult res;
  CodecState st = state;
  for (std::size_t t = first; t <= last; ++t) {
    InterOutput out = model.code_inter(seq.frames[t], seq.flows[t], st, QuantMode::kTrain,
                                       derive_seed(noise_seed, t));
    Tensor rate = scale(out.bits, 1.0 / pixels);
    Tensor dist = mse(out.recon, seq.frames[t]);
    Tensor l = add(rate, scale(dist, lambda));
    res.loss = res.loss.defined() ? add(res.loss, l) : l;
    FrameStats fs;
    fs.index = t;
    fs.bpp = rate.item();
    fs.mse = dist.item();
    fs.psnr = fs.mse > 0.0 ? std::min(kPsnrCap, -10.0 * std::log10(fs.mse)) : kPsnrCap;
    res.rate += fs.bpp;
    res.distortion += fs.mse;
    res.frames.push_back(fs);
    st = std::move(out.next);
  }
  res.state = std::move(st);
  return res;
}

GroupResult cascaded_loss(const Model& model, const Sequence& seq, double lambda, std::size_t T,
                          int intra_q, std::uint64_t noise_seed) {
  if (T == 0 || seq.size() < T + 1) {
    throw InputError("cascaded loss over T = " + std::to_string(T) + " needs " +
                     std::to_string(T + 1) + " frames, have " + std::to_string(seq.size()));
  }
  return code_frames(model, seq, 1, T, intra_state(model, seq, intra_q), lambda, noise_seed);
}

namespace {

void accumulate(StepReport& r, const GroupResult& g) {
  r.loss += g.loss.item();
  r.rate += g.rate;
  r.distortion += g.distortion;
}

void require_frames(const Sequence& sample, std::size_t T) {
  if (sample.size() < T + 1) {
    throw InputError("training sample needs " + std::to_string(T + 1) + " frames, has " +
                     std::to_string(sample.size()));
  }
}

}  // namespace

StepReport pcfs_step(Model& model, Adam& adam, const Sequence& sample, const TrainConfig& cfg,
                     std::uint64_t noise_seed) {
  cfg.validate();
  require_frames(sample, cfg.frames);
  const auto b = cfg.resolved_boundaries();
  const bool shifted = cfg.strategy == Strategy::kPcfsShifted;
  StepReport rep;
  Tape tape;
  CodecState carried;
  std::map<std::size_t, CodecState> saved;  // detached states for shifted restarts
  for (std::size_t j = 0; j + 1 < b.size(); ++j) {
    tape.clear();
    tape.reset_peak();
    TapeScope scope(&tape);
    model.params().zero_grad();

    CodecState st;
    if (j == 0) {
      st = intra_state(model, sample, cfg.intra_q);
    } else if (shifted) {
      const std::size_t from = b[j] - cfg.shift;
      st = saved.at(from);
      // Pre-roll with the current weights; gradients flow through it but
      // its frames add nothing to the loss.
      st = code_frames(model, sample, from + 1, b[j], st, cfg.lambda, noise_seed).state;
    } else {
      st = carried;
    }

    GroupResult g;
    const std::size_t save_at = (shifted && j + 2 < b.size()) ? b[j + 1] - cfg.shift : 0;
    if (save_at > b[j]) {
      GroupResult head = code_frames(model, sample, b[j] + 1, save_at, st, cfg.lambda, noise_seed);
      saved[save_at] = head.state.detached();
      GroupResult tail =
          code_frames(model, sample, save_at + 1, b[j + 1], head.state, cfg.lambda, noise_seed);
      g.loss = add(head.loss, tail.loss);
      g.rate = head.rate + tail.rate;
      g.distortion = head.distortion + tail.distortion;
      g.state = std::move(tail.state);
    } else {
      if (shifted && j + 2 < b.size()) saved[b[j]] = st.detached();
      g = code_frames(model, sample, b[j] + 1, b[j + 1], st, cfg.lambda, noise_seed);
    }

    rep.peak_tape = std::max(rep.peak_tape, tape.peak_size());
    rep.cross_edges += tape.cross_generation_edges();
    tape.backward(g.loss);
    adam.step(model.params());
    ++rep.updates;
    accumulate(rep, g);
    // Cut the carried state loose right away so the old graph can be freed.
    carried = g.state.detached();
  }
  return rep;
}

StepReport train_step(Model& model, Adam& adam, const Sequence& sample, const TrainConfig& cfg,
                      std::uint64_t noise_seed) {
  if (cfg.strategy != Strategy::kCascaded) return pcfs_step(model, adam, sample, cfg, noise_seed);
  cfg.validate();
  require_frames(sample, cfg.frames);
  StepReport rep;
  Tape tape;
  TapeScope scope(&tape);
  model.params().zero_grad();
  GroupResult g = cascaded_loss(model, sample, cfg.lambda, cfg.frames, cfg.intra_q, noise_seed);
  rep.peak_tape = tape.peak_size();
  rep.cross_edges = tape.cross_generation_edges();
  tape.backward(g.loss);
  adam.step(model.params());
  rep.updates = 1;
  accumulate(rep, g);
  return rep;
}

std::vector<StepReport> train(Model& model, const Sequence& data, const TrainConfig& cfg,
                              const std::function<void(const StepReport&)>& on_step) {
  cfg.validate();
  const std::size_t T = cfg.frames;
  require_frames(data, T);
  if (cfg.crop > 0 && (cfg.crop > data.height() || cfg.crop > data.width())) {
    throw ConfigError("crop larger than the training frames");
  }
  Rng rng(derive_seed(cfg.seed, 0x5A4D504C));
  Adam adam(cfg.lr);
  std::vector<StepReport> reports;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const std::size_t start = rng.below(data.size() - T);
    Sequence sample = data.window(start, T + 1);
    if (cfg.crop > 0) {
      const std::size_t top = rng.below(data.height() - cfg.crop + 1);
      const std::size_t left = rng.below(data.width() - cfg.crop + 1);
      sample = sample.crop(top, left, cfg.crop, cfg.crop);
    }
    StepReport r = train_step(model, adam, sample, cfg, derive_seed(cfg.seed, s, 1));
    r.step = s;
    if (on_step) on_step(r);
    reports.push_back(r);
  }
  return reports;
}

// ---- evaluation -------------------------------------------------------------

namespace {

FrameStats frame_stats(std::size_t index, double bits, const Tensor& recon, const Sequence& seq,
                       std::size_t t) {
  const std::size_t vh = seq.valid_height ? seq.valid_height : seq.height();
  const std::size_t vw = seq.valid_width ? seq.valid_width : seq.width();
  const Tensor a = crop_frame(recon, vh, vw), b = crop_frame(seq.frames[t], vh, vw);
  FrameStats fs;
  fs.index = index;
  fs.bpp = bits / static_cast<double>(vh * vw);
  fs.mse = mse_between(a, b);
  fs.psnr = psnr(a, b);
  return fs;
}

Tensor clamp_unit(const Tensor& x) {
  std::vector<double> v(x.values().begin(), x.values().end());
  for (double& e : v) e = std::clamp(e, 0.0, 1.0);
  return Tensor(x.shape(), std::move(v));
}

}  // namespace

EvalReport evaluate(const Model& model, const Sequence& seq, double lambda, int intra_q,
                    int intra_period) {
  TapeScope no_grad(nullptr);
  EvalReport rep;
  CodecState st;
  std::size_t inter = 0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (is_intra_frame(t, intra_period)) {
      IntraOutput out = model.code_intra(seq.frames[t], intra_q);
      rep.frames.push_back(frame_stats(t, out.bits, out.recon, seq, t));
      st = std::move(out.next);
      continue;
    }
    InterOutput out = model.code_inter(seq.frames[t], quantize_flow(seq.flows[t]), st,
                                       QuantMode::kEval);
    FrameStats fs = frame_stats(t, out.bits.item(), clamp_unit(out.recon), seq, t);
    rep.mean_bpp += fs.bpp;
    rep.mean_mse += fs.mse;
    rep.mean_psnr += fs.psnr;
    rep.rd_cost += fs.bpp + lambda * fs.mse;
    rep.frames.push_back(fs);
    ++inter;
    st = std::move(out.next);
  }
  if (inter > 0) {
    const double n = static_cast<double>(inter);
    rep.mean_bpp /= n;
    rep.mean_mse /= n;
    rep.mean_psnr /= n;
    rep.rd_cost /= n;
  }
  return rep;
}

ProbeReport noise_probe(const Model& model, const Sequence& seq, std::size_t inject_at,
                        double noise_std, std::uint64_t seed, int intra_q) {
  if (inject_at == 0 || inject_at >= seq.size()) {
    throw InputError("inject_at must lie in [1, " + std::to_string(seq.size() - 1) + "]");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise std must be >= 0");
  TapeScope no_grad(nullptr);
  auto run = [&](bool inject) {
    std::vector<FrameStats> stats;
    CodecState st;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (t == 0) {
        IntraOutput out = model.code_intra(seq.frames[0], intra_q);
        stats.push_back(frame_stats(1, out.bits, out.recon, seq, 0));
        st = std::move(out.next);
      } else {
        InterOutput out = model.code_inter(seq.frames[t], quantize_flow(seq.flows[t]), st,
                                           QuantMode::kEval);
        stats.push_back(frame_stats(t + 1, out.bits.item(), clamp_unit(out.recon), seq, t));
        st = std::move(out.next);
      }
      if (inject && t + 1 == inject_at) {
        Rng rng(derive_seed(seed, 0x4E4F4953));
        std::vector<double> eps(st.feature.numel());
        for (double& e : eps) e = noise_std * rng.normal();
        st.feature = add(st.feature, Tensor(st.feature.shape(), std::move(eps)));
      }
    }
    return stats;
  };
  const auto clean = run(false);
  const auto noisy = run(true);
  ProbeReport rep;
  rep.inject_at = inject_at;
  rep.noise_std = noise_std;
  for (std::size_t t = 0; t < clean.size(); ++t) {
    rep.rows.push_back({t + 1, clean[t].psnr, clean[t].bpp, noisy[t].psnr, noisy[t].bpp});
  }
  return rep;
}

}  // namespace nlvc
