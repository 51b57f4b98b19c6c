#pragma once

// Conditional inter-frame coder: contextual analysis/synthesis ladders over
// three scales, a Gaussian entropy model conditioned on local contexts, an
// intra stub for the first frame of each GOP, and the NLVC bitstream.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlvc/context.hpp"
#include "nlvc/entropy.hpp"
#include "nlvc/motion.hpp"
#include "nlvc/nn.hpp"

namespace nlvc {

struct ModelConfig {
  std::size_t feature_channels = 8;
  std::array<std::size_t, kNumScales> context_channels{8, 12, 16};
  // Hidden ladder widths at scales 0 and 1 (encoder outputs, decoder inputs).
  std::array<std::size_t, 2> ladder_channels{12, 16};
  std::size_t latent_channels = 8;
  std::size_t heads = 4;
  std::size_t offset_groups = 4;
  double offset_radius = 0.5;
  double leaky_slope = kDefaultLeakySlope;
  double sigma_min = 0.04;
  ContextVariant variant = ContextVariant::kMultiFrame;
  std::uint64_t init_seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

enum class QuantMode { kTrain, kEval };

// Decoder-side reference state carried from frame to frame.
struct CodecState {
  Tensor feature;                                           // F̂_t
  std::optional<MultiScaleFeatures> previous_pyramid;       // pyramid of F̂_{t-1}
  std::optional<std::array<Tensor, kNumScales>> previous_local;  // cl_ref1 of frame t

  bool empty() const { return !feature.defined(); }
  // Copy with every tensor cut from the graph.
  CodecState detached() const;
};

// Everything both sides derive from (state, motion) before touching the latent.
struct Conditioning {
  std::array<MotionField, kNumScales> flows;
  MultiScaleFeatures ref1;
  MultiScaleFeatures ref2;
  bool ref2_available = false;
  std::array<LocalContexts, kNumScales> local;
  Tensor mu;
  Tensor sigma;
};

struct LatentPlan {
  Tensor y;
  Tensor y_hat;
  Tensor mu;
  Tensor sigma;
  std::vector<std::int64_t> symbols;  // eval mode only: round(y - mu)
};

struct InterOutput {
  LatentPlan latent;
  Tensor bits;     // scalar, estimated -log2 p(y_hat)
  Tensor feature;  // F̂_{t+1}
  Tensor recon;    // 3×H×W, unclamped
  CodecState next;
};

struct IntraOutput {
  Tensor recon;
  Tensor feature;
  double bits = 0.0;
  std::vector<std::uint8_t> levels;  // quantiser indices, C·H·W
  CodecState next;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  std::unique_ptr<Model> clone() const;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  Conditioning condition(const CodecState& state, const MotionField& v) const;
  Tensor analysis(const Tensor& x, const Conditioning& cond) const;
  Tensor synthesis(const Tensor& y_hat, const Conditioning& cond) const;
  Tensor reconstruct(const Tensor& feature) const;
  Tensor intra_feature(const Tensor& recon) const;
  CodecState advance(const Conditioning& cond, const Tensor& feature) const;

  // Full inter-frame pass. In train mode the latent gets uniform noise seeded
  // by noise_seed; in eval mode it is rounded around mu.
  InterOutput code_inter(const Tensor& x, const MotionField& v, const CodecState& state,
                         QuantMode mode, std::uint64_t noise_seed = 0) const;
  InterOutput code_inter(const Tensor& x, const Conditioning& cond, QuantMode mode,
                         std::uint64_t noise_seed = 0) const;
  // Decoder half: rebuilds F̂_{t+1} and recon from symbols without the frame.
  InterOutput decode_inter(std::span<const std::int64_t> symbols, const Conditioning& cond) const;
  IntraOutput code_intra(const Tensor& x, int q) const;
  IntraOutput decode_intra(std::span<const std::uint8_t> levels, std::size_t height,
                           std::size_t width, int q) const;

  std::size_t latent_numel(std::size_t height, std::size_t width) const;

 private:
  void check_frame(const Tensor& x) const;
  MultiScaleFeatures pyramid(const Tensor& feature) const;
  ContextSet contexts_at(std::size_t scale, const Tensor& query, const Mhlca& attention,
                         const Conditioning& cond) const;

  ModelConfig cfg_;
  ParameterStore store_;
  Conv2d intra_embed_;
  PyramidBuilder ref_pyramid_;
  std::array<OffsetDiversity, kNumScales> od_;
  std::array<MultiScaleRefine, kNumScales> refine_;
  std::array<Mhlca, kNumScales> enc_attention_;
  std::array<Mhlca, kNumScales> dec_attention_;
  std::array<Fusion, kNumScales> enc_fuse_;
  std::array<Fusion, kNumScales> dec_fuse_;
  ResBlock dec_out_;
  Conv2d recon_;
  Conv2d prior_hidden_;
  Conv2d prior_out_;
};

// Uniform pixel quantiser at step 2^q (q = 0 is lossless at 8 bits).
struct IntraStub {
  static constexpr int kMaxQuality = 7;
  static std::vector<std::uint8_t> levels(const Tensor& x, int q);
  static Tensor dequantize(std::span<const std::uint8_t> levels, const Shape& shape, int q);
  // Rate model: 8 bits per sample divided by 2^q.
  static double bits(std::size_t samples, int q);
};

// ---- bitstream ----------------------------------------------------------

inline constexpr std::uint8_t kBitstreamVersion = 1;
inline constexpr double kFlowPrecision = 16.0;  // flow side info in 1/16 px

enum class FrameType : std::uint8_t { kIntra = 0, kInter = 1 };

struct CodedFrame {
  FrameType type = FrameType::kInter;
  std::vector<std::uint8_t> payload;
  double bits_actual = 0.0;     // latent bits (inter) or rate model (intra)
  double bits_estimated = 0.0;  // entropy-model estimate (inter) or rate model (intra)
  std::size_t symbols = 0;
  Tensor recon;    // 3×H×W, clamped to [0,1]
  Tensor feature;  // F̂_{t+1}
};

struct CodingOptions {
  int intra_period = -1;  // -1: one intra frame, then P-frames
  int intra_q = 2;
};

bool is_intra_frame(std::size_t index, int intra_period);

// Rounds a flow field to the transmitted 1/16-pel grid.
MotionField quantize_flow(const MotionField& v);

std::pair<LatentPlan, CodedFrame> encode_frame(const Model& model, const Tensor& x,
                                               const MotionField& v, CodecState& state,
                                               const LatentCoder& coder = {});
CodedFrame encode_intra_frame(const Model& model, const Tensor& x, int q, CodecState& state);
// Decodes one payload, updating state. Never sees the source frame.
CodedFrame decode_frame(const Model& model, std::span<const std::uint8_t> payload,
                        std::size_t height, std::size_t width, CodecState& state,
                        const LatentCoder& coder = {});

struct EncodeResult {
  std::vector<std::uint8_t> bitstream;
  std::vector<CodedFrame> frames;
};

struct DecodeResult {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<CodedFrame> frames;
};

// flows[t] maps frame t-1 to frame t; flows[0] is ignored.
EncodeResult encode_sequence(const Model& model, const std::vector<Tensor>& frames,
                             const std::vector<MotionField>& flows, const CodingOptions& opts);
DecodeResult decode_sequence(const Model& model, std::span<const std::uint8_t> bitstream);

}  // namespace nlvc
