#include "nlvc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nlvc/errors.hpp"
#include "nlvc/hash.hpp"
#include "nlvc/sequence_io.hpp"

namespace nlvc {

static_assert(std::endian::native == std::endian::little, "checkpoint blob assumes little endian");

std::string config_hash(const nlohmann::json& j) { return hex64(fnv1a64(j.dump())); }

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra) {
  nlohmann::json header;
  header["model"] = model.config().to_json();
  header["config_hash"] = config_hash(header["model"]);
  header["extra"] = extra;
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : model.params().entries()) {
    const std::size_t n = e.tensor.numel();
    tensors.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset},
                       {"count", n}});
    offset += n;
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : model.params().entries()) {
    const auto v = e.tensor.values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError("short write to " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw IoError(path.string() + " is not an NLVC checkpoint");
  }
  if (len > (std::uint64_t{1} << 30)) throw IoError(path.string() + ": implausible header size");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string() + ": truncated header");

  LoadedCheckpoint ck;
  try {
    ck.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad header: " + e.what());
  }
  const ModelConfig cfg = ModelConfig::from_json(ck.header.at("model"));
  if (ck.header.value("config_hash", "") != config_hash(cfg.to_json())) {
    throw ConfigError(path.string() + ": config hash does not match the stored model config");
  }
  ck.model = std::make_unique<Model>(cfg);
  auto& entries = ck.model->params().entries();
  const auto& tensors = ck.header.at("tensors");
  if (tensors.size() != entries.size()) {
    throw ConfigError(path.string() + ": parameter count differs from the model");
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& t = tensors[i];
    auto& p = entries[i].tensor;
    if (t.at("name").get<std::string>() != entries[i].name ||
        t.at("shape").get<Shape>() != p.shape() || t.at("offset").get<std::size_t>() != offset ||
        t.at("count").get<std::size_t>() != p.numel()) {
      throw ConfigError(path.string() + ": tensor '" + entries[i].name + "' does not match");
    }
    auto v = p.values();
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw IoError(path.string() + ": truncated parameter blob");
    offset += p.numel();
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError(path.string() + ": trailing bytes after parameter blob");
  }
  return ck;
}

void write_training_log(const std::filesystem::path& path, const std::vector<StepReport>& steps,
                        const std::string& hash) {
  ResultTable t;
  t.config_hash = hash;
  t.columns = {"step", "loss", "rate", "distortion"};
  for (const auto& s : steps) {
    std::ostringstream l, r, d;
    l.precision(17);
    r.precision(17);
    d.precision(17);
    l << s.loss;
    r << s.rate;
    d << s.distortion;
    t.rows.push_back({std::to_string(s.step), l.str(), r.str(), d.str()});
  }
  write_results(path, t);
}

}  // namespace nlvc
