#pragma once

// Frame ingestion (PPM/PGM, raw planar + JSON sidecar), synthetic sequences
// with ground-truth motion, and schema-versioned result files.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlvc/motion.hpp"
#include "nlvc/tensor.hpp"

namespace nlvc {

enum class SequenceKind { kTranslation, kRepeatedMotif, kFastMotion, kStatic, kFile };

std::string to_string(SequenceKind k);
SequenceKind parse_sequence_kind(const std::string& s);

struct SequenceSpec {
  SequenceKind kind = SequenceKind::kTranslation;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t frames = 8;
  std::uint64_t seed = 1;
  // translation / fast_motion: velocity in px/frame; repeated_motif: drift.
  double vx = 1.0;
  double vy = 0.0;
  std::size_t motif_grid = 4;  // motifs per side
  double jitter = 1.0;         // per-instance displacement amplitude, px/frame
  double noise = 0.0;          // temporal noise std on [0,1] scale
  std::string path;            // kind == file

  void validate() const;
  nlohmann::json to_json() const;
  static SequenceSpec from_json(const nlohmann::json& j);
};

struct Sequence {
  std::vector<Tensor> frames;       // 3×H×W in [0,1], H and W multiples of 4
  std::vector<MotionField> flows;   // flows[t]: t-1 -> t; flows[0] zero
  std::size_t valid_height = 0;     // extents before padding
  std::size_t valid_width = 0;
  bool exact_flow = false;          // ground truth (generated) vs estimated

  std::size_t size() const { return frames.size(); }
  std::size_t height() const { return frames.empty() ? 0 : frames[0].dim(1); }
  std::size_t width() const { return frames.empty() ? 0 : frames[0].dim(2); }
  // Frames [begin, begin + count) as a new sequence; flows[begin] reset to zero.
  Sequence window(std::size_t begin, std::size_t count) const;
  // Spatial crop at (top, left) of size h×w (multiples of 4).
  Sequence crop(std::size_t top, std::size_t left, std::size_t h, std::size_t w) const;
};

Sequence generate(const SequenceSpec& spec);
// Directory of .ppm/.pgm frames (sorted by name) or a raw planar file with a
// "<path>.json" sidecar {height, width, channels, count}.
Sequence load_sequence(const std::filesystem::path& path);
Sequence make_sequence(std::vector<Tensor> frames);  // pads, estimates flow

// 8-bit round trip: values snapped to k/255.
Tensor quantize8(const Tensor& x);
Tensor pad_to_multiple(const Tensor& x, std::size_t multiple);
Tensor crop_frame(const Tensor& x, std::size_t h, std::size_t w);

Tensor read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Tensor& frame);  // P6, or P5 for 1 channel
void write_raw(const std::filesystem::path& path, const std::vector<Tensor>& frames);

// BT.601 full-range RGB <-> YCbCr on [0,1] planes.
Tensor rgb_to_ycbcr(const Tensor& rgb);
Tensor ycbcr_to_rgb(const Tensor& ycc);

// ---- result persistence ---------------------------------------------------

inline constexpr int kResultsSchemaVersion = 1;

struct ResultTable {
  std::string config_hash;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

// First line "# nlvc-results schema=<v> config=<hash>", then a header row.
// Append mode requires a matching schema, config hash and column set.
void write_results(const std::filesystem::path& path, const ResultTable& table,
                   bool append = false);
ResultTable read_results(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const nlohmann::json& manifest);

}  // namespace nlvc
