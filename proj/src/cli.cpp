#include "nlvc/cli.hpp"

#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "nlvc/attention.hpp"
#include "nlvc/checkpoint.hpp"
#include "nlvc/codec.hpp"
#include "nlvc/errors.hpp"
#include "nlvc/hash.hpp"
#include "nlvc/metrics.hpp"
#include "nlvc/training.hpp"

namespace nlvc {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("NLVC_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  std::uint64_t v = 0;
  const char* end = s + std::char_traits<char>::length(s);
  auto [p, ec] = std::from_chars(s, end, v);
  if (ec != std::errc() || p != end) throw ConfigError(std::string("NLVC_SEED is not an integer: ") + s);
  return v;
}

namespace {

Sequence resolve_sequence_spec(const nlohmann::json& j, const fs::path& base) {
  SequenceSpec spec = SequenceSpec::from_json(j);
  if (spec.kind == SequenceKind::kFile && fs::path(spec.path).is_relative()) {
    spec.path = (base / spec.path).string();
  }
  return generate(spec);
}

}  // namespace

Sequence resolve_sequence(const std::string& source) {
  const fs::path p(source);
  if (p.extension() == ".json") {
    const nlohmann::json j = read_json(p);
    return resolve_sequence_spec(j.contains("data") ? j["data"] : j, p.parent_path());
  }
  return load_sequence(p);
}

// ---- train -------------------------------------------------------------------

nlohmann::json cmd_train(const TrainArgs& args, std::ostream& out) {
  const nlohmann::json cfg = read_json(args.config);
  ModelConfig mc = ModelConfig::from_json(cfg.value("model", nlohmann::json::object()));
  nlohmann::json tj = cfg.value("train", nlohmann::json::object());
  if (args.strategy) tj["strategy"] = *args.strategy;
  if (args.frames) {
    tj["frames"] = *args.frames;
    tj.erase("boundaries");
  }
  if (args.groups) {
    tj["groups"] = *args.groups;
    tj.erase("boundaries");
  }
  if (args.lambda) tj["lambda"] = *args.lambda;
  if (args.steps) tj["steps"] = *args.steps;
  std::optional<std::uint64_t> seed = args.seed ? args.seed : env_seed();
  if (seed) {
    tj["seed"] = *seed;
    mc.init_seed = *seed;
  }
  const TrainConfig tc = TrainConfig::from_json(tj);
  if (!cfg.contains("data")) throw ConfigError(args.config.string() + ": missing \"data\"");
  const Sequence data = resolve_sequence_spec(cfg["data"], args.config.parent_path());

  std::unique_ptr<Model> model;
  std::string init_hash;
  if (!args.init.empty()) {
    LoadedCheckpoint ck = load_checkpoint(args.init);
    model = std::move(ck.model);
    mc = model->config();
    std::ifstream in(args.init, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    init_hash = hex64(fnv1a64(bytes));
  } else {
    model = std::make_unique<Model>(mc);
  }

  nlohmann::json manifest;
  manifest["model"] = mc.to_json();
  manifest["train"] = tc.to_json();
  manifest["data"] = cfg["data"];
  if (!init_hash.empty()) manifest["init_checkpoint_hash"] = init_hash;
  const std::string hash = config_hash(manifest);

  const std::vector<StepReport> reports = train(*model, data, tc, [&](const StepReport& r) {
    if (!args.quiet && (r.step % 50 == 0 || r.step + 1 == tc.steps)) {
      out << "step " << r.step << " loss " << num(r.loss) << " rate " << num(r.rate)
          << " distortion " << num(r.distortion) << '\n';
    }
  });

  const fs::path log = args.log.empty() ? fs::path(args.out.string() + ".log.csv") : args.log;
  save_checkpoint(args.out, *model, {{"train", tc.to_json()}, {"run_hash", hash}});
  write_training_log(log, reports, hash);
  {
    std::ifstream in(args.out, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    manifest["checkpoint_hash"] = hex64(fnv1a64(bytes));
  }
  manifest["config_hash"] = hash;
  manifest["final_loss"] = reports.empty() ? 0.0 : reports.back().loss;
  write_manifest(fs::path(args.out.string() + ".json"), manifest);
  out << "checkpoint " << args.out.string() << " hash " << manifest["checkpoint_hash"].get<std::string>()
      << '\n';
  return manifest;
}

// ---- eval --------------------------------------------------------------------

namespace {

EvalRow eval_one(const fs::path& checkpoint, const std::string& label, const Sequence& seq,
                 const EvalArgs& args, std::vector<std::vector<std::string>>& frame_rows) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  CodingOptions opts;
  opts.intra_period = args.intra_period;
  opts.intra_q = args.intra_q;
  const EncodeResult enc = encode_sequence(*ck.model, seq.frames, seq.flows, opts);
  const DecodeResult dec = decode_sequence(*ck.model, enc.bitstream);
  if (dec.frames.size() != enc.frames.size()) {
    throw CodecError(label + ": decoded " + std::to_string(dec.frames.size()) + " of " +
                     std::to_string(enc.frames.size()) + " frames");
  }
  const std::size_t vh = seq.valid_height ? seq.valid_height : seq.height();
  const std::size_t vw = seq.valid_width ? seq.valid_width : seq.width();
  EvalRow row;
  row.label = label;
  row.frames = enc.frames.size();
  for (std::size_t t = 0; t < enc.frames.size(); ++t) {
    const auto a = enc.frames[t].recon.values(), b = dec.frames[t].recon.values();
    if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) {
      throw CodecError(label + ": decoder reconstruction diverges at frame " + std::to_string(t + 1));
    }
    const Tensor rec = crop_frame(dec.frames[t].recon, vh, vw);
    const Tensor src = crop_frame(seq.frames[t], vh, vw);
    const double p = psnr(rec, src), m = ms_ssim(rec, src);
    const double bits = enc.frames[t].bits_actual;
    row.bits += bits;
    row.psnr_db += p;
    row.msssim += m;
    frame_rows.push_back({label, std::to_string(t + 1),
                          enc.frames[t].type == FrameType::kIntra ? "I" : "P", num(bits),
                          num(bits / static_cast<double>(vh * vw)), num(p), num(m)});
  }
  const double n = static_cast<double>(row.frames);
  row.bpp = row.bits / (n * static_cast<double>(vh * vw));
  row.psnr_db /= n;
  row.msssim /= n;
  row.bitstream = enc.bitstream;
  return row;
}

}  // namespace

std::vector<EvalRow> cmd_eval(const EvalArgs& args, std::ostream& out) {
  if (args.checkpoints.empty()) throw ConfigError("eval needs at least one checkpoint");
  if (!args.labels.empty() && args.labels.size() != args.checkpoints.size()) {
    throw ConfigError("--label count must match --checkpoint count");
  }
  if (!args.bitstream.empty() && args.checkpoints.size() != 1) {
    throw ConfigError("--bitstream needs exactly one checkpoint");
  }
  if (args.intra_period == 0 || args.intra_period < -1) {
    throw ConfigError("--intra-period must be a positive frame count or -1");
  }
  const Sequence seq = resolve_sequence(args.sequence);
  const std::size_t n = args.checkpoints.size();
  std::vector<EvalRow> rows(n);
  std::vector<std::vector<std::vector<std::string>>> frame_rows(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const std::string label =
            args.labels.empty() ? args.checkpoints[i].stem().string() : args.labels[i];
        rows[i] = eval_one(args.checkpoints[i], label, seq, args, frame_rows[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(args.jobs, 1, n);
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  if (!args.bitstream.empty()) {
    std::ofstream bs(args.bitstream, std::ios::binary);
    if (!bs) throw IoError("cannot write " + args.bitstream.string());
    bs.write(reinterpret_cast<const char*>(rows[0].bitstream.data()),
             static_cast<std::streamsize>(rows[0].bitstream.size()));
  }
  nlohmann::json settings = {{"sequence", args.sequence},
                             {"intra_period", args.intra_period},
                             {"intra_q", args.intra_q}};
  const std::string hash = config_hash(settings);
  if (!args.frames_out.empty()) {
    ResultTable t;
    t.config_hash = hash;
    t.columns = {"label", "frame", "type", "bits", "bpp", "psnr_db", "msssim"};
    for (auto& fr : frame_rows) t.rows.insert(t.rows.end(), fr.begin(), fr.end());
    write_results(args.frames_out, t, true);
  }
  std::vector<RDRow> rd;
  for (const auto& r : rows) {
    rd.push_back({r.label, r.bpp, r.psnr_db, r.msssim});
    out << r.label << ": frames " << r.frames << " bpp " << num(r.bpp) << " psnr " << num(r.psnr_db)
        << " dB ms-ssim " << num(r.msssim) << " bitstream " << r.bitstream.size() << " B\n";
  }
  if (!args.out.empty()) {
    ResultTable t;
    t.config_hash = hash;
    t.columns = {"label", "bpp", "psnr_db", "msssim"};
    for (const auto& r : rd) t.rows.push_back({r.label, num(r.bpp), num(r.psnr_db), num(r.msssim)});
    write_results(args.out, t, true);
  }
  return rows;
}

// ---- dispatcher ----------------------------------------------------------------

namespace {

int cmd_bdrate(const fs::path& test, const fs::path& anchor, const std::string& metric,
               std::ostream& out) {
  if (metric != "psnr" && metric != "msssim") throw ConfigError("--metric must be psnr or msssim");
  const bool ms = metric == "msssim";
  const auto tc = rd_curves(read_rd_csv(test), ms);
  const auto ac = rd_curves(read_rd_csv(anchor), ms);
  out << "test,anchor,metric,bd_rate_pct\n";
  for (const auto& [tl, tcurve] : tc) {
    for (const auto& [al, acurve] : ac) {
      std::string value;
      try {
        value = num(bd_rate(tcurve, acurve));
      } catch (const MetricUndefined& e) {
        value = "undefined";
      }
      out << tl << ',' << al << ',' << metric << ',' << value << '\n';
    }
  }
  return kExitOk;
}

int cmd_probe(const fs::path& checkpoint, const std::string& sequence, std::size_t inject_at,
              double noise_std, std::uint64_t seed, int intra_q, const fs::path& csv,
              std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const Sequence seq = resolve_sequence(sequence);
  const ProbeReport rep = noise_probe(*ck.model, seq, inject_at, noise_std, seed, intra_q);
  ResultTable t;
  t.config_hash = config_hash({{"checkpoint", checkpoint.string()},
                               {"sequence", sequence},
                               {"inject_at", inject_at},
                               {"std", noise_std},
                               {"seed", seed}});
  t.columns = {"frame",      "psnr_clean", "bpp_clean", "psnr_noisy",
               "bpp_noisy", "psnr_delta", "bpp_delta"};
  for (const auto& r : rep.rows) {
    t.rows.push_back({std::to_string(r.frame), num(r.psnr_clean), num(r.bpp_clean),
                      num(r.psnr_noisy), num(r.bpp_noisy), num(r.psnr_delta()),
                      num(r.bpp_delta())});
  }
  if (csv.empty()) {
    out << "frame,psnr_delta,bpp_delta\n";
    for (const auto& r : rep.rows) {
      out << r.frame << ',' << num(r.psnr_delta()) << ',' << num(r.bpp_delta()) << '\n';
    }
  } else {
    write_results(csv, t);
  }
  return kExitOk;
}

int cmd_generate(const std::string& spec_path, const fs::path& dir, std::ostream& out) {
  const nlohmann::json j = read_json(spec_path);
  const SequenceSpec spec = SequenceSpec::from_json(j.contains("data") ? j["data"] : j);
  const Sequence seq = generate(spec);
  fs::create_directories(dir);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.ppm", t);
    write_pnm(dir / name, crop_frame(seq.frames[t], seq.valid_height ? seq.valid_height : seq.height(),
                                     seq.valid_width ? seq.valid_width : seq.width()));
  }
  write_manifest(dir / "manifest.json", {{"spec", spec.to_json()},
                                         {"config_hash", config_hash(spec.to_json())}});
  out << "wrote " << seq.size() << " frames to " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"nlvc: toy learned video codec lab"};
  app.require_subcommand(1);

  TrainArgs ta;
  std::string strategy;
  std::size_t frames = 0, groups = 0, steps = 0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  auto* train_cmd = app.add_subcommand("train", "train a toy model and write a checkpoint");
  train_cmd->add_option("config", ta.config, "JSON with model, train and data sections")->required();
  train_cmd->add_option("-o,--out", ta.out, "checkpoint path")->required();
  train_cmd->add_option("--log", ta.log, "training log CSV");
  train_cmd->add_option("--init", ta.init, "start from this checkpoint");
  auto* o_strategy = train_cmd->add_option("--strategy", strategy, "cascaded | pcfs | pcfs-shifted");
  auto* o_frames = train_cmd->add_option("--frames", frames, "inter frames per sample (T)");
  auto* o_groups = train_cmd->add_option("--groups", groups, "PCFS groups");
  auto* o_lambda = train_cmd->add_option("--lambda", lambda, "rate-distortion weight");
  auto* o_seed = train_cmd->add_option("--seed", seed, "overrides NLVC_SEED and the config");
  auto* o_steps = train_cmd->add_option("--steps", steps, "training samples");
  train_cmd->add_flag("-q,--quiet", ta.quiet);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "code a sequence, verify decoding, report RD");
  eval_cmd->add_option("-c,--checkpoint", ea.checkpoints, "one or more checkpoints")->required();
  eval_cmd->add_option("-s,--sequence", ea.sequence, "sequence spec .json, frame dir or raw file")
      ->required();
  eval_cmd->add_option("--intra-period", ea.intra_period, "N or -1");
  eval_cmd->add_option("--intra-q", ea.intra_q, "intra quantiser shift 0-7");
  eval_cmd->add_option("-o,--out", ea.out, "append aggregate rows to this CSV");
  eval_cmd->add_option("--frames-out", ea.frames_out, "append per-frame rows to this CSV");
  eval_cmd->add_option("--bitstream", ea.bitstream, "write the bitstream here");
  eval_cmd->add_option("--label", ea.labels, "curve labels, one per checkpoint");
  eval_cmd->add_option("-j,--jobs", ea.jobs, "parallel checkpoints");

  fs::path bd_test, bd_anchor;
  std::string bd_metric = "psnr";
  auto* bd_cmd = app.add_subcommand("bdrate", "BD-rate of each test curve against each anchor");
  bd_cmd->add_option("test", bd_test)->required();
  bd_cmd->add_option("anchor", bd_anchor)->required();
  bd_cmd->add_option("--metric", bd_metric, "psnr | msssim");

  std::vector<std::size_t> lengths{256, 1024, 4096};
  std::size_t bench_dim = 16, bench_heads = 1, bench_runs = 3;
  std::uint64_t bench_seed = 1;
  bool no_vanilla = false;
  fs::path bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "attention op counts and wall clock");
  bench_cmd->add_option("--lengths", lengths, "H·W values")->delimiter(',');
  bench_cmd->add_option("--dim", bench_dim);
  bench_cmd->add_option("--heads", bench_heads);
  bench_cmd->add_option("--runs", bench_runs);
  bench_cmd->add_option("--seed", bench_seed);
  bench_cmd->add_flag("--no-vanilla", no_vanilla, "skip the quadratic baseline");
  bench_cmd->add_option("-o,--out", bench_out);

  fs::path probe_ckpt, probe_out;
  std::string probe_seq;
  std::size_t inject_at = 3;
  double probe_std = 1.0;
  std::uint64_t probe_seed = 1;
  int probe_q = 2;
  auto* probe_cmd = app.add_subcommand("probe", "noise injection into the propagated feature");
  probe_cmd->add_option("-c,--checkpoint", probe_ckpt)->required();
  probe_cmd->add_option("-s,--sequence", probe_seq)->required();
  probe_cmd->add_option("--inject-at", inject_at, "1-based frame whose output feature is perturbed");
  probe_cmd->add_option("--std", probe_std);
  auto* o_probe_seed = probe_cmd->add_option("--seed", probe_seed);
  probe_cmd->add_option("--intra-q", probe_q);
  probe_cmd->add_option("-o,--out", probe_out);

  std::string gen_spec;
  fs::path gen_dir;
  auto* gen_cmd = app.add_subcommand("generate", "write a synthetic sequence as PPM frames");
  gen_cmd->add_option("spec", gen_spec)->required();
  gen_cmd->add_option("-o,--out", gen_dir)->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*train_cmd) {
      if (*o_strategy) ta.strategy = strategy;
      if (*o_frames) ta.frames = frames;
      if (*o_groups) ta.groups = groups;
      if (*o_lambda) ta.lambda = lambda;
      if (*o_seed) ta.seed = seed;
      if (*o_steps) ta.steps = steps;
      cmd_train(ta, out);
    } else if (*eval_cmd) {
      cmd_eval(ea, out);
    } else if (*bd_cmd) {
      return cmd_bdrate(bd_test, bd_anchor, bd_metric, out);
    } else if (*bench_cmd) {
      const std::string csv = bench_csv(
          benchmark_attention(lengths, bench_dim, bench_heads, bench_runs, bench_seed, !no_vanilla));
      if (bench_out.empty()) {
        out << csv;
      } else {
        write_text(bench_out, csv);
      }
    } else if (*probe_cmd) {
      if (!*o_probe_seed) probe_seed = env_seed().value_or(probe_seed);
      return cmd_probe(probe_ckpt, probe_seq, inject_at, probe_std, probe_seed, probe_q, probe_out,
                       out);
    } else if (*gen_cmd) {
      return cmd_generate(gen_spec, gen_dir, out);
    }
  } catch (const CodecError& e) {
    err << "codec integrity failure: " << e.what() << '\n';
    return kExitCodec;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MetricUndefined& e) {
    err << "metric undefined: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUnexpected;
  }
  return kExitOk;
}

}  // namespace nlvc
