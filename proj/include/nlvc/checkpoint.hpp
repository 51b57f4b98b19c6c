#pragma once

// Checkpoint files: "NLVCCKP1", u64 header length, JSON header, then every
// parameter as little-endian f64 in header order.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlvc/codec.hpp"
#include "nlvc/training.hpp"

namespace nlvc {

inline constexpr char kCheckpointMagic[8] = {'N', 'L', 'V', 'C', 'C', 'K', 'P', '1'};

// Stable hash of a JSON document (compact dump, sorted keys).
std::string config_hash(const nlohmann::json& j);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  nlohmann::json header;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra = nlohmann::json::object());
// Rebuilds the model from the stored config and checks every tensor against it.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// CSV with columns step, loss, rate, distortion.
void write_training_log(const std::filesystem::path& path, const std::vector<StepReport>& steps,
                        const std::string& config_hash);

}  // namespace nlvc
