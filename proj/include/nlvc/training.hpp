#pragma once

// Cascaded rate-distortion training, the partial cascaded fine-tuning
// schedule (per-group updates with detached state between groups), Adam,
// and the propagated-feature noise probe.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlvc/codec.hpp"
#include "nlvc/sequence_io.hpp"

namespace nlvc {

enum class Strategy { kCascaded, kPcfs, kPcfsShifted };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

struct TrainConfig {
  double lambda = 256.0;
  std::size_t frames = 6;                // T: inter frames per sample
  std::size_t groups = 1;                // used when boundaries is empty
  std::vector<std::size_t> boundaries;   // t_0 = 0 < t_1 < ... < t_G = T
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::size_t steps = 100;
  Strategy strategy = Strategy::kCascaded;
  int intra_q = 2;
  std::size_t crop = 0;   // random square crop per sample; 0 keeps the full frame
  std::size_t shift = 1;  // pcfs-shifted: frames recomputed in front of each group

  // Explicit boundaries, or equal groups round(j·T/G).
  std::vector<std::size_t> resolved_boundaries() const;
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

std::vector<std::size_t> equal_boundaries(std::size_t frames, std::size_t groups);

// Named schedules from the fine-tuning-length study: T in {6, 20, 38, 55}
// with {1, 1, 2, 3} groups.
struct SchedulePreset {
  std::size_t frames;
  std::size_t groups;
};
std::vector<SchedulePreset> finetune_length_presets();

// ---- optimiser --------------------------------------------------------------

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One bias-corrected Adam step on a flat parameter block.
void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state,
                 double lr);

// Adam over every tensor of a ParameterStore; moments live as long as the
// optimiser (they persist across PCFS groups).
class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}
  void step(ParameterStore& params);
  std::uint64_t updates() const { return updates_; }
  double lr() const { return lr_; }

 private:
  double lr_;
  std::vector<AdamState> state_;
  std::uint64_t updates_ = 0;
};

// ---- losses -----------------------------------------------------------------

struct FrameStats {
  std::size_t index = 0;  // position in the window (0 = intra)
  double bpp = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
};

struct GroupResult {
  Tensor loss;  // Σ R_t + λ·D_t over the coded frames
  double rate = 0.0;
  double distortion = 0.0;
  std::vector<FrameStats> frames;
  CodecState state;  // after the last coded frame
};

// Intra-codes frames[0] and returns the reference state.
CodecState intra_state(const Model& model, const Sequence& seq, int intra_q);

// Codes frames [first, last] (inclusive, first >= 1) in train mode from
// `state`. Noise for frame t is seeded by derive_seed(noise_seed, t).
GroupResult code_frames(const Model& model, const Sequence& seq, std::size_t first,
                        std::size_t last, const CodecState& state, double lambda,
                        std::uint64_t noise_seed);

// Σ_{t=1..T} R_t + λ·D_t with gradients through the propagated features of
// all T frames. R in bits per pixel, D = MSE.
GroupResult cascaded_loss(const Model& model, const Sequence& seq, double lambda, std::size_t T,
                          int intra_q, std::uint64_t noise_seed);

struct StepReport {
  std::size_t step = 0;
  double loss = 0.0;
  double rate = 0.0;
  double distortion = 0.0;
  std::size_t updates = 0;
  std::size_t peak_tape = 0;    // largest live graph during the step
  std::size_t cross_edges = 0;  // graph edges reaching an earlier group
};

// One sample under cfg.strategy. `sample` holds T + 1 frames.
StepReport train_step(Model& model, Adam& adam, const Sequence& sample, const TrainConfig& cfg,
                      std::uint64_t noise_seed);
StepReport pcfs_step(Model& model, Adam& adam, const Sequence& sample, const TrainConfig& cfg,
                     std::uint64_t noise_seed);

// cfg.steps samples of T + 1 frames (random window and crop) drawn from `data`.
std::vector<StepReport> train(Model& model, const Sequence& data, const TrainConfig& cfg,
                              const std::function<void(const StepReport&)>& on_step = {});

// ---- evaluation -------------------------------------------------------------

struct EvalReport {
  std::vector<FrameStats> frames;  // includes the intra frame(s)
  double mean_bpp = 0.0;           // inter frames only
  double mean_mse = 0.0;
  double mean_psnr = 0.0;
  double rd_cost = 0.0;            // mean over inter frames of bpp + λ·mse
};

// Closed-loop eval-mode coding with entropy-model rate (no bitstream).
EvalReport evaluate(const Model& model, const Sequence& seq, double lambda, int intra_q,
                    int intra_period = -1);

struct ProbeRow {
  std::size_t frame = 0;  // 1-based
  double psnr_clean = 0.0;
  double bpp_clean = 0.0;
  double psnr_noisy = 0.0;
  double bpp_noisy = 0.0;
  double psnr_delta() const { return psnr_noisy - psnr_clean; }
  double bpp_delta() const { return bpp_noisy - bpp_clean; }
};

struct ProbeReport {
  std::size_t inject_at = 0;
  double noise_std = 0.0;
  std::vector<ProbeRow> rows;
};

// Codes the sequence twice; the second run adds N(0, noise_std²) to the
// propagated feature produced by frame inject_at (1-based) before it is used.
ProbeReport noise_probe(const Model& model, const Sequence& seq, std::size_t inject_at,
                        double noise_std, std::uint64_t seed, int intra_q);

}  // namespace nlvc
