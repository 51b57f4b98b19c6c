#pragma once

// Subcommands of the nlvc tool. run_cli maps module errors to exit codes:
// 0 ok, 1 unexpected, 2 config/input, 3 codec integrity, 4 IO.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlvc/sequence_io.hpp"

namespace nlvc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUnexpected = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitCodec = 3;
inline constexpr int kExitIo = 4;

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct TrainArgs {
  std::filesystem::path config;
  std::filesystem::path out;  // checkpoint
  std::filesystem::path log;  // defaults to <out>.log.csv
  std::filesystem::path init;  // optional starting checkpoint
  std::optional<std::string> strategy;
  std::optional<std::size_t> frames;
  std::optional<std::size_t> groups;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  bool quiet = false;
};

struct EvalArgs {
  std::vector<std::filesystem::path> checkpoints;
  std::string sequence;
  int intra_period = -1;
  int intra_q = 2;
  std::filesystem::path out;         // aggregate RD rows (appended)
  std::filesystem::path frames_out;  // per-frame rows
  std::filesystem::path bitstream;   // only with a single checkpoint
  std::vector<std::string> labels;
  std::size_t jobs = 1;
};

struct EvalRow {
  std::string label;
  std::size_t frames = 0;
  double bits = 0.0;
  double bpp = 0.0;
  double psnr_db = 0.0;
  double msssim = 0.0;
  std::vector<std::uint8_t> bitstream;
};

// Flag > NLVC_SEED > config file.
std::optional<std::uint64_t> env_seed();

// A JSON SequenceSpec file, or a directory / raw file understood by load_sequence.
Sequence resolve_sequence(const std::string& source);

nlohmann::json cmd_train(const TrainArgs& args, std::ostream& out);
std::vector<EvalRow> cmd_eval(const EvalArgs& args, std::ostream& out);

}  // namespace nlvc
