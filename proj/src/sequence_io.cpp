#include "nlvc/sequence_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "nlvc/rng.hpp"

namespace nlvc {

namespace fs = std::filesystem;

std::string to_string(SequenceKind k) {
  switch (k) {
    case SequenceKind::kTranslation:
      return "translation";
    case SequenceKind::kRepeatedMotif:
      return "repeated_motif";
    case SequenceKind::kFastMotion:
      return "fast_motion";
    case SequenceKind::kStatic:
      return "static";
    case SequenceKind::kFile:
      return "file";
  }
  return "?";
}

SequenceKind parse_sequence_kind(const std::string& s) {
  for (auto k : {SequenceKind::kTranslation, SequenceKind::kRepeatedMotif,
                 SequenceKind::kFastMotion, SequenceKind::kStatic, SequenceKind::kFile}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown sequence kind '" + s + "'");
}

void SequenceSpec::validate() const {
  if (kind == SequenceKind::kFile) {
    if (path.empty()) throw ConfigError("file sequence needs a path");
    return;
  }
  if (height < 4 || width < 4) throw ConfigError("sequence extents must be at least 4");
  if (frames == 0) throw ConfigError("sequence needs at least one frame");
  if (!(noise >= 0.0) || !(jitter >= 0.0)) throw ConfigError("noise/jitter must be >= 0");
  if (kind == SequenceKind::kRepeatedMotif &&
      (motif_grid == 0 || height / motif_grid < 8 || width / motif_grid < 8)) {
    throw ConfigError("motif grid leaves cells smaller than 8 px");
  }
  if (kind == SequenceKind::kFastMotion && std::hypot(vx, vy) <= 8.0) {
    throw ConfigError("fast_motion needs a velocity above 8 px/frame");
  }
}

nlohmann::json SequenceSpec::to_json() const {
  return {{"kind", to_string(kind)}, {"height", height},   {"width", width},
          {"frames", frames},        {"seed", seed},       {"vx", vx},
          {"vy", vy},                {"motif_grid", motif_grid}, {"jitter", jitter},
          {"noise", noise},          {"path", path}};
}

SequenceSpec SequenceSpec::from_json(const nlohmann::json& j) {
  SequenceSpec s;
  try {
    s.kind = parse_sequence_kind(j.value("kind", to_string(s.kind)));
    if (s.kind == SequenceKind::kFastMotion) {
      s.vx = 9.5;
      s.vy = 2.0;
    }
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.frames = j.value("frames", s.frames);
    s.seed = j.value("seed", s.seed);
    s.vx = j.value("vx", s.vx);
    s.vy = j.value("vy", s.vy);
    s.motif_grid = j.value("motif_grid", s.motif_grid);
    s.jitter = j.value("jitter", s.jitter);
    s.noise = j.value("noise", s.noise);
    s.path = j.value("path", s.path);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sequence spec: ") + e.what());
  }
  s.validate();
  return s;
}

Sequence Sequence::window(std::size_t begin, std::size_t count) const {
  if (count == 0 || begin + count > frames.size()) {
    throw InputError("window [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside a " + std::to_string(frames.size()) + "-frame sequence");
  }
  Sequence out;
  out.valid_height = valid_height;
  out.valid_width = valid_width;
  out.exact_flow = exact_flow;
  out.frames.assign(frames.begin() + static_cast<long>(begin),
                    frames.begin() + static_cast<long>(begin + count));
  out.flows.assign(flows.begin() + static_cast<long>(begin),
                   flows.begin() + static_cast<long>(begin + count));
  out.flows[0] = MotionField::zeros(height(), width());
  return out;
}

namespace {

Tensor crop_region(const Tensor& x, std::size_t top, std::size_t left, std::size_t h,
                   std::size_t w) {
  const std::size_t c = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (top + h > H || left + w > W) throw DimensionError("crop outside frame");
  std::vector<double> out(c * h * w);
  auto v = x.values();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        out[(ch * h + y) * w + xx] = v[(ch * H + top + y) * W + left + xx];
  return Tensor(Shape{c, h, w}, std::move(out));
}

}  // namespace

Sequence Sequence::crop(std::size_t top, std::size_t left, std::size_t h, std::size_t w) const {
  if (h % 4 != 0 || w % 4 != 0) throw DimensionError("crop extents must be multiples of 4");
  Sequence out;
  out.valid_height = h;
  out.valid_width = w;
  out.exact_flow = exact_flow;
  for (const auto& f : frames) out.frames.push_back(crop_region(f, top, left, h, w));
  for (const auto& v : flows) out.flows.emplace_back(crop_region(v.tensor(), top, left, h, w));
  return out;
}

Tensor quantize8(const Tensor& x) {
  std::vector<double> v(x.values().begin(), x.values().end());
  for (double& e : v) e = static_cast<double>(std::lround(std::clamp(e, 0.0, 1.0) * 255.0)) / 255.0;
  return Tensor(x.shape(), std::move(v));
}

Tensor pad_to_multiple(const Tensor& x, std::size_t multiple) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t ph = (h + multiple - 1) / multiple * multiple;
  const std::size_t pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return x;
  std::vector<double> out(c * ph * pw);
  auto v = x.values();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t xx = 0; xx < pw; ++xx)
        out[(ch * ph + y) * pw + xx] =
            v[(ch * h + std::min(y, h - 1)) * w + std::min(xx, w - 1)];
  return Tensor(Shape{c, ph, pw}, std::move(out));
}

Tensor crop_frame(const Tensor& x, std::size_t h, std::size_t w) {
  if (x.dim(1) == h && x.dim(2) == w) return x;
  return crop_region(x, 0, 0, h, w);
}

// ---- synthetic content ------------------------------------------------------

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

// Smooth colour texture: a few low-frequency plane waves per channel.
struct Texture {
  struct Wave {
    double fx, fy, amp;
    std::array<double, 3> phase;
  };
  std::vector<Wave> waves;
  std::array<double, 3> base{};

  // Random frequencies up to 1/16 cycles per pixel.
  static Texture random(Rng& rng, std::size_t count, double amp) {
    Texture t;
    for (auto& b : t.base) b = rng.uniform(0.35, 0.65);
    for (std::size_t i = 0; i < count; ++i) {
      const double f = rng.uniform(1.0 / 64.0, 1.0 / 16.0);
      const double a = rng.uniform(0.0, kTau);
      t.waves.push_back({f * std::cos(a), f * std::sin(a), amp * rng.uniform(0.5, 1.0),
                         {rng.uniform(0, kTau), rng.uniform(0, kTau), rng.uniform(0, kTau)}});
    }
    return t;
  }

  // Frequencies that are multiples of 1/period along each axis, so the
  // texture tiles with the motif grid.
  static Texture periodic(Rng& rng, double period_x, double period_y, double amp) {
    Texture t;
    for (auto& b : t.base) b = rng.uniform(0.3, 0.5);
    const std::array<std::pair<int, int>, 3> harmonics{{{1, 0}, {0, 1}, {1, 1}}};
    for (auto [kx, ky] : harmonics) {
      t.waves.push_back({kx / period_x, ky / period_y, amp * rng.uniform(0.5, 1.0),
                         {rng.uniform(0, kTau), rng.uniform(0, kTau), rng.uniform(0, kTau)}});
    }
    return t;
  }

  double operator()(std::size_t ch, double x, double y) const {
    double v = base[ch];
    for (const auto& w : waves) v += w.amp * std::sin(kTau * (w.fx * x + w.fy * y) + w.phase[ch]);
    return v;
  }
};

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Five-petal flower: returns (alpha, centre weight) at offset (dx, dy).
std::pair<double, double> flower(double dx, double dy, double radius) {
  const double r = std::hypot(dx, dy);
  const double theta = std::atan2(dy, dx);
  const double edge = radius * (0.7 + 0.3 * std::cos(5.0 * theta));
  const double alpha = 1.0 - smoothstep(edge - 1.0, edge + 1.0, r);
  const double centre = 1.0 - smoothstep(0.25 * radius - 0.75, 0.25 * radius + 0.75, r);
  return {alpha, centre};
}

void add_noise(std::vector<double>& v, Rng& rng, double std) {
  if (std <= 0.0) return;
  for (double& e : v) e += std * rng.normal();
}

Tensor finish_frame(std::vector<double> v, std::size_t h, std::size_t w) {
  return quantize8(Tensor(Shape{3, h, w}, std::move(v)));
}

Sequence generate_translation(const SequenceSpec& s, Rng& rng) {
  const Texture tex = Texture::random(rng, 5, 0.08);
  Sequence seq;
  for (std::size_t t = 0; t < s.frames; ++t) {
    const double ox = s.vx * static_cast<double>(t), oy = s.vy * static_cast<double>(t);
    std::vector<double> v(3 * s.height * s.width);
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < s.height; ++y)
        for (std::size_t x = 0; x < s.width; ++x)
          v[(ch * s.height + y) * s.width + x] =
              tex(ch, static_cast<double>(x) - ox, static_cast<double>(y) - oy);
    add_noise(v, rng, s.noise);
    seq.frames.push_back(finish_frame(std::move(v), s.height, s.width));
    seq.flows.push_back(t == 0 ? MotionField::zeros(s.height, s.width)
                               : MotionField::constant(s.height, s.width, s.vx, s.vy));
  }
  return seq;
}

Sequence generate_static(const SequenceSpec& s, Rng& rng) {
  SequenceSpec still = s;
  still.vx = still.vy = 0.0;
  return generate_translation(still, rng);
}

Sequence generate_motifs(const SequenceSpec& s, Rng& rng) {
  const std::size_t g = s.motif_grid;
  const double cell_w = static_cast<double>(s.width) / static_cast<double>(g);
  const double cell_h = static_cast<double>(s.height) / static_cast<double>(g);
  const double radius = 0.38 * std::min(cell_w, cell_h);
  const Texture bg = Texture::periodic(rng, cell_w, cell_h, 0.05);
  std::array<double, 3> petal{}, centre{};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    petal[ch] = rng.uniform(0.55, 0.95);
    centre[ch] = rng.uniform(0.05, 0.35);
  }
  const std::size_t n = g * g;
  std::vector<double> jx(n, 0.0), jy(n, 0.0), px(n, 0.0), py(n, 0.0);
  Sequence seq;
  const std::size_t plane = s.height * s.width;
  for (std::size_t t = 0; t < s.frames; ++t) {
    const double ox = s.vx * static_cast<double>(t), oy = s.vy * static_cast<double>(t);
    std::vector<double> dx(n, s.vx), dy(n, s.vy);
    for (std::size_t i = 0; i < n; ++i) {
      px[i] = jx[i];
      py[i] = jy[i];
      if (t > 0 && s.jitter > 0.0) {
        jx[i] = rng.uniform(-s.jitter, s.jitter);
        jy[i] = rng.uniform(-s.jitter, s.jitter);
      }
      dx[i] += jx[i] - px[i];
      dy[i] += jy[i] - py[i];
    }
    std::vector<double> v(3 * plane);
    std::vector<double> flow(2 * plane);
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y);
        double alpha = 0.0, cw = 0.0;
        std::size_t owner = n;
        // Each motif stays within reach of its own cell; test the 3×3 neighbourhood.
        const long cx = static_cast<long>(std::floor((fx - ox) / cell_w));
        const long cy = static_cast<long>(std::floor((fy - oy) / cell_h));
        for (long ny = cy - 1; ny <= cy + 1; ++ny) {
          for (long nx = cx - 1; nx <= cx + 1; ++nx) {
            const long gx = ((nx % static_cast<long>(g)) + static_cast<long>(g)) % static_cast<long>(g);
            const long gy = ((ny % static_cast<long>(g)) + static_cast<long>(g)) % static_cast<long>(g);
            const std::size_t i = static_cast<std::size_t>(gy) * g + static_cast<std::size_t>(gx);
            const double mx = (static_cast<double>(nx) + 0.5) * cell_w + ox + jx[i];
            const double my = (static_cast<double>(ny) + 0.5) * cell_h + oy + jy[i];
            auto [a, c] = flower(fx - mx, fy - my, radius);
            if (a > alpha) {
              alpha = a;
              cw = c;
              owner = i;
            }
          }
        }
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double back = bg(ch, fx - ox, fy - oy);
          const double fore = petal[ch] + cw * (centre[ch] - petal[ch]);
          v[ch * plane + y * s.width + x] = back + alpha * (fore - back);
        }
        const bool on_motif = alpha > 0.5 && owner < n;
        flow[y * s.width + x] = on_motif ? dx[owner] : s.vx;
        flow[plane + y * s.width + x] = on_motif ? dy[owner] : s.vy;
      }
    }
    add_noise(v, rng, s.noise);
    seq.frames.push_back(finish_frame(std::move(v), s.height, s.width));
    seq.flows.push_back(t == 0 ? MotionField::zeros(s.height, s.width)
                               : MotionField(Tensor(Shape{2, s.height, s.width}, std::move(flow))));
  }
  return seq;
}

}  // namespace

Sequence generate(const SequenceSpec& spec) {
  spec.validate();
  if (spec.kind == SequenceKind::kFile) return load_sequence(spec.path);
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(spec.kind) + 1));
  Sequence seq;
  switch (spec.kind) {
    case SequenceKind::kTranslation:
    case SequenceKind::kFastMotion:
      seq = generate_translation(spec, rng);
      break;
    case SequenceKind::kRepeatedMotif:
      seq = generate_motifs(spec, rng);
      break;
    case SequenceKind::kStatic:
      seq = generate_static(spec, rng);
      break;
    case SequenceKind::kFile:
      break;
  }
  seq.valid_height = spec.height;
  seq.valid_width = spec.width;
  seq.exact_flow = true;
  // Odd extents are generated as requested and padded like any other input.
  if (spec.height % 4 != 0 || spec.width % 4 != 0) {
    for (auto& f : seq.frames) f = pad_to_multiple(f, 4);
    for (auto& v : seq.flows) v = MotionField(pad_to_multiple(v.tensor(), 4));
  }
  return seq;
}

// ---- file formats -----------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Tensor read_pnm(const fs::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      if (++digits > 9) throw InputError(path.string() + ": header value too large");
    }
    if (digits == 0) throw InputError(path.string() + ": malformed PNM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
    throw InputError(path.string() + ": not a binary PPM/PGM file");
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const std::size_t w = read_int(), h = read_int(), maxval = read_int();
  if (w == 0 || h == 0) throw InputError(path.string() + ": zero image extent");
  if (maxval == 0 || maxval > 255) throw InputError(path.string() + ": only 8-bit PNM supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw InputError(path.string() + ": malformed PNM header");
  }
  ++pos;
  const std::size_t need = w * h * channels;
  if (bytes.size() - pos < need) throw InputError(path.string() + ": truncated pixel data");
  std::vector<double> v(3 * w * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t src = pos + (y * w + x) * channels + (channels == 3 ? ch : 0);
        v[(ch * h + y) * w + x] = static_cast<double>(bytes[src]) / static_cast<double>(maxval);
      }
    }
  }
  return quantize8(Tensor(Shape{3, h, w}, std::move(v)));
}

void write_pnm(const fs::path& path, const Tensor& frame) {
  if (frame.rank() != 3 || (frame.dim(0) != 3 && frame.dim(0) != 1)) {
    throw DimensionError("write_pnm expects 1×H×W or 3×H×W");
  }
  const std::size_t c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (c == 3 ? "P6" : "P5") << '\n' << w << ' ' << h << "\n255\n";
  auto v = frame.values();
  std::vector<char> buf(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        buf[(y * w + x) * c + ch] = static_cast<char>(
            static_cast<std::uint8_t>(std::lround(std::clamp(v[(ch * h + y) * w + x], 0.0, 1.0) * 255.0)));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_raw(const fs::path& path, const std::vector<Tensor>& frames) {
  if (frames.empty()) throw InputError("write_raw: no frames");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& f : frames) {
    if (f.shape() != frames[0].shape()) throw InputError("write_raw: inconsistent frame sizes");
    std::vector<char> buf(f.numel());
    auto v = f.values();
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<char>(
          static_cast<std::uint8_t>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0)));
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
  const nlohmann::json side = {{"height", frames[0].dim(1)},
                               {"width", frames[0].dim(2)},
                               {"channels", frames[0].dim(0)},
                               {"count", frames.size()}};
  std::ofstream sc(fs::path(path.string() + ".json"));
  if (!sc) throw IoError("cannot write sidecar for " + path.string());
  sc << side.dump(2) << '\n';
}

Sequence make_sequence(std::vector<Tensor> frames) {
  if (frames.empty()) throw InputError("sequence has no frames");
  Sequence seq;
  seq.valid_height = frames[0].dim(1);
  seq.valid_width = frames[0].dim(2);
  for (auto& f : frames) {
    if (f.shape() != frames[0].shape()) throw InputError("inconsistent frame sizes");
    seq.frames.push_back(pad_to_multiple(f, 4));
  }
  const std::size_t h = seq.height(), w = seq.width();
  seq.flows.push_back(MotionField::zeros(h, w));
  for (std::size_t t = 1; t < seq.frames.size(); ++t) {
    seq.flows.push_back(estimate_motion(seq.frames[t - 1], seq.frames[t]));
  }
  return seq;
}

Sequence load_sequence(const fs::path& path) {
  std::error_code ec;
  if (fs::is_directory(path, ec)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      const auto ext = e.path().extension().string();
      if (ext == ".ppm" || ext == ".pgm") files.push_back(e.path());
    }
    if (files.empty()) throw InputError(path.string() + ": no .ppm/.pgm frames");
    std::sort(files.begin(), files.end());
    std::vector<Tensor> frames;
    for (const auto& f : files) frames.push_back(read_pnm(f));
    return make_sequence(std::move(frames));
  }
  if (!fs::exists(path, ec)) throw IoError("no such file: " + path.string());
  const fs::path sidecar = path.string() + ".json";
  nlohmann::json side;
  {
    std::ifstream in(sidecar);
    if (!in) throw IoError("missing sidecar " + sidecar.string());
    try {
      in >> side;
    } catch (const nlohmann::json::exception& e) {
      throw InputError(sidecar.string() + ": " + e.what());
    }
  }
  std::size_t h = 0, w = 0, c = 0, n = 0;
  try {
    h = side.at("height").get<std::size_t>();
    w = side.at("width").get<std::size_t>();
    c = side.at("channels").get<std::size_t>();
    n = side.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(sidecar.string() + ": " + e.what());
  }
  if (h == 0 || w == 0 || n == 0 || (c != 1 && c != 3)) {
    throw InputError(sidecar.string() + ": invalid extents");
  }
  const auto bytes = read_file(path);
  const std::size_t frame_bytes = h * w * c;
  if (bytes.size() != frame_bytes * n) {
    throw InputError(path.string() + ": expected " + std::to_string(frame_bytes * n) +
                     " bytes, found " + std::to_string(bytes.size()));
  }
  std::vector<Tensor> frames;
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<double> v(3 * h * w);
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < h * w; ++i)
        v[ch * h * w + i] = bytes[t * frame_bytes + (c == 3 ? ch : 0) * h * w + i] / 255.0;
    frames.emplace_back(Shape{3, h, w}, std::move(v));
  }
  return make_sequence(std::move(frames));
}

// ---- colour -----------------------------------------------------------------

Tensor rgb_to_ycbcr(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw DimensionError("rgb_to_ycbcr expects 3×H×W");
  const std::size_t plane = rgb.dim(1) * rgb.dim(2);
  auto v = rgb.values();
  std::vector<double> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    const double r = v[i], g = v[plane + i], b = v[2 * plane + i];
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    out[i] = y;
    out[plane + i] = 0.5 + (b - y) / 1.772;
    out[2 * plane + i] = 0.5 + (r - y) / 1.402;
  }
  return Tensor(rgb.shape(), std::move(out));
}

Tensor ycbcr_to_rgb(const Tensor& ycc) {
  if (ycc.rank() != 3 || ycc.dim(0) != 3) throw DimensionError("ycbcr_to_rgb expects 3×H×W");
  const std::size_t plane = ycc.dim(1) * ycc.dim(2);
  auto v = ycc.values();
  std::vector<double> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    const double y = v[i], cb = v[plane + i] - 0.5, cr = v[2 * plane + i] - 0.5;
    const double r = y + 1.402 * cr;
    const double b = y + 1.772 * cb;
    const double g = (y - 0.299 * r - 0.114 * b) / 0.587;
    out[i] = r;
    out[plane + i] = g;
    out[2 * plane + i] = b;
  }
  return Tensor(ycc.shape(), std::move(out));
}

// ---- results ----------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string join_csv(const std::vector<std::string>& fields) {
  std::string s;
  for (std::size_t i = 0; i < fields.size(); ++i) s += (i ? "," : "") + csv_field(fields[i]);
  return s;
}

std::string schema_line(const std::string& hash) {
  return "# nlvc-results schema=" + std::to_string(kResultsSchemaVersion) + " config=" + hash;
}

}  // namespace

void write_results(const fs::path& path, const ResultTable& table, bool append) {
  for (const auto& r : table.rows) {
    if (r.size() != table.columns.size()) throw InputError("result row width mismatch");
  }
  std::error_code ec;
  const bool extend = append && fs::exists(path, ec) && fs::file_size(path, ec) > 0;
  if (extend) {
    ResultTable existing = read_results(path);
    if (existing.columns != table.columns) {
      throw InputError(path.string() + ": column set differs from existing file");
    }
    if (existing.config_hash != table.config_hash) {
      throw InputError(path.string() + ": config hash differs from existing file");
    }
  }
  std::ofstream out(path, extend ? std::ios::app : std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  if (!extend) out << schema_line(table.config_hash) << '\n' << join_csv(table.columns) << '\n';
  for (const auto& r : table.rows) out << join_csv(r) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

ResultTable read_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty results file");
  const std::string prefix = "# nlvc-results schema=";
  if (line.rfind(prefix, 0) != 0) throw InputError(path.string() + ": missing schema line");
  std::istringstream meta(line.substr(prefix.size()));
  int version = -1;
  std::string rest;
  meta >> version >> rest;
  if (version != kResultsSchemaVersion) {
    throw InputError(path.string() + ": schema version " + std::to_string(version) +
                     ", expected " + std::to_string(kResultsSchemaVersion));
  }
  ResultTable t;
  if (rest.rfind("config=", 0) == 0) t.config_hash = rest.substr(7);
  if (!std::getline(in, line)) throw InputError(path.string() + ": missing header row");
  t.columns = split_csv(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_csv(line);
    if (row.size() != t.columns.size()) {
      throw InputError(path.string() + ": row with " + std::to_string(row.size()) +
                       " fields, expected " + std::to_string(t.columns.size()));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_manifest(const fs::path& path, const nlohmann::json& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  nlohmann::json m = manifest;
  m["schema"] = kResultsSchemaVersion;
  out << m.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace nlvc
