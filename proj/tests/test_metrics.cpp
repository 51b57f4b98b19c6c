#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "nlvc/errors.hpp"
#include "nlvc/metrics.hpp"
#include "nlvc/rng.hpp"

using namespace nlvc;

namespace {

Tensor random_frame(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(Shape{c, h, w});
  for (double& v : t.values()) v = rng.uniform();
  return t;
}

// Direct 2-D evaluation: every window position, full 2-D Gaussian weights,
// 2×2 box downsampling. Shares nothing with the separable implementation.
double brute_ms_ssim(const Tensor& a, const Tensor& b) {
  const double wts[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  const std::size_t C = a.dim(0);
  std::size_t H = a.dim(1), W = a.dim(2);
  std::size_t m = 0;
  while (m < 5 && std::min(H, W) > 10 * (std::size_t{1} << m)) ++m;
  double wsum = 0.0;
  for (std::size_t j = 0; j < m; ++j) wsum += wts[j];
  double g[11][11], gs = 0.0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      g[y][x] = std::exp(-((y - 5) * (y - 5) + (x - 5) * (x - 5)) / (2 * 1.5 * 1.5));
      gs += g[y][x];
    }
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t h = H, w = W;
    std::vector<double> pa(h * w), pb(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      pa[i] = a.value(c * h * w + i);
      pb[i] = b.value(c * h * w + i);
    }
    double prod = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      double cs_sum = 0.0, s_sum = 0.0;
      std::size_t n = 0;
      for (std::size_t y0 = 0; y0 + 11 <= h; ++y0)
        for (std::size_t x0 = 0; x0 + 11 <= w; ++x0) {
          double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
          for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 11; ++x) {
              const double k = g[y][x] / gs;
              const double u = pa[(y0 + y) * w + x0 + x], v = pb[(y0 + y) * w + x0 + x];
              ma += k * u;
              mb += k * v;
              saa += k * u * u;
              sbb += k * v * v;
              sab += k * u * v;
            }
          const double c1 = 1e-4, c2 = 9e-4;
          const double cs = (2 * (sab - ma * mb) + c2) / (saa - ma * ma + sbb - mb * mb + c2);
          cs_sum += cs;
          s_sum += cs * (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
          ++n;
        }
      const double term = (j + 1 == m ? s_sum : cs_sum) / static_cast<double>(n);
      prod *= std::pow(std::max(term, 0.0), wts[j] / wsum);
      std::vector<double> na((h / 2) * (w / 2)), nb(na.size());
      for (std::size_t y = 0; y < h / 2; ++y)
        for (std::size_t x = 0; x < w / 2; ++x) {
          auto avg = [&](const std::vector<double>& p) {
            return 0.25 * (p[2 * y * w + 2 * x] + p[2 * y * w + 2 * x + 1] +
                           p[(2 * y + 1) * w + 2 * x] + p[(2 * y + 1) * w + 2 * x + 1]);
          };
          na[y * (w / 2) + x] = avg(pa);
          nb[y * (w / 2) + x] = avg(pb);
        }
      pa.swap(na);
      pb.swap(nb);
      h /= 2;
      w /= 2;
    }
    total += prod;
  }
  return total / static_cast<double>(C);
}

RDCurve curve(std::vector<RDPoint> p, std::string label = "c") {
  RDCurve c;
  c.label = std::move(label);
  c.points = std::move(p);
  return c;
}

// Trapezoid rule on a dense grid over an independent PCHIP evaluation.
double dense_bd_rate(const RDCurve& test, const RDCurve& anchor) {
  auto fit = [](const RDCurve& c) {
    std::vector<double> q, r;
    for (const auto& p : c.points) {
      q.push_back(p.quality);
      r.push_back(std::log10(p.bpp));
    }
    return Pchip(q, r);
  };
  const Pchip ft = fit(test), fa = fit(anchor);
  const double lo = std::max(test.points.front().quality, anchor.points.front().quality);
  const double hi = std::min(test.points.back().quality, anchor.points.back().quality);
  const std::size_t n = 200000;
  double s = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double q = lo + (hi - lo) * static_cast<double>(i) / n;
    const double d = ft(q) - fa(q);
    s += (i == 0 || i == n) ? 0.5 * d : d;
  }
  const double avg = s / n;
  return 100.0 * (std::pow(10.0, avg) - 1.0);
}

}  // namespace

TEST_CASE("PSNR formula, cap and symmetry") {
  Tensor a(Shape{3, 4, 4}, 0.5), b(Shape{3, 4, 4}, 0.6);
  CHECK(psnr(a, b) == doctest::Approx(20.0));
  CHECK(psnr(a, a) == kPsnrCap);
  Tensor x(Shape{1, 2, 2}, 10.0), y(Shape{1, 2, 2}, 11.0);
  CHECK(psnr(x, y, 255.0) == doctest::Approx(10.0 * std::log10(255.0 * 255.0)));
  Tensor r = random_frame(3, 8, 8, 1), s = random_frame(3, 8, 8, 2);
  CHECK(psnr(r, s) == psnr(s, r));
  CHECK_THROWS_AS(psnr(r, Tensor(Shape{3, 8, 4})), DimensionError);
  CHECK(mse_between(a, b) == doctest::Approx(0.01));
}

TEST_CASE("MS-SSIM scale selection") {
  CHECK(ms_ssim_scales(10) == 0);
  CHECK(ms_ssim_scales(11) == 1);
  CHECK(ms_ssim_scales(64) == 3);
  CHECK(ms_ssim_scales(160) == 4);
  CHECK(ms_ssim_scales(161) == 5);
  CHECK_THROWS_AS(ms_ssim(Tensor(Shape{1, 8, 8}), Tensor(Shape{1, 8, 8})), DimensionError);
}

TEST_CASE("MS-SSIM matches a direct two-dimensional evaluation") {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{16, 16}, {48, 40}, {64, 64}}) {
    Tensor a = random_frame(3, h, w, 3);
    Tensor b = random_frame(3, h, w, 4);
    for (std::size_t i = 0; i < a.numel(); ++i) b.values()[i] = 0.7 * a.value(i) + 0.3 * b.value(i);
    CHECK(ms_ssim(a, b) == doctest::Approx(brute_ms_ssim(a, b)).epsilon(1e-10));
    CHECK(std::abs(ms_ssim(a, b) - ms_ssim(b, a)) <= 1e-12);
  }
  Tensor a = random_frame(3, 32, 32, 5);
  CHECK(ms_ssim(a, a) == doctest::Approx(1.0));
}

TEST_CASE("MS-SSIM of an inverted image is low, and noise never helps") {
  Tensor a = random_frame(1, 64, 64, 6);
  Tensor inv = a.detach();
  for (double& v : inv.values()) v = 1.0 - v;
  CHECK(ms_ssim(a, inv) < 0.5);
  Rng rng(7);
  Tensor noise(Shape{1, 64, 64});
  for (double& v : noise.values()) v = rng.normal();
  double last = 1.0;
  for (int k = 1; k <= 20; ++k) {
    Tensor b = a.detach();
    for (std::size_t i = 0; i < b.numel(); ++i) b.values()[i] += 0.01 * k * noise.value(i);
    const double v = ms_ssim(a, b);
    CHECK(v <= last + 1e-6);
    last = v;
  }
}

TEST_CASE("PCHIP agrees with a reference implementation") {
  // Values from scipy.interpolate.PchipInterpolator on the same data.
  Pchip p({0.0, 1.0, 2.5, 3.0, 4.5, 6.0}, {0.0, 0.8, 1.0, 1.9, 2.0, 4.0});
  CHECK(p(0.3) == doctest::Approx(0.31448).epsilon(1e-12));
  CHECK(p(2.7) == doctest::Approx(1.33037375933453).epsilon(1e-12));
  CHECK(p(5.5) == doctest::Approx(3.05855379188713).epsilon(1e-12));
  CHECK(p.integral(0.2, 5.9) == doctest::Approx(9.21069530541306).epsilon(1e-12));
  const double d[] = {1.0666666666666669, 0.24, 0.2899328859060402, 0.15211267605633813,
                      0.1269841269841271, 1.9666666666666663};
  for (std::size_t i = 0; i < 6; ++i) CHECK(p.slopes()[i] == doctest::Approx(d[i]).epsilon(1e-12));
  // Interpolates the knots and stays monotone between monotone data.
  CHECK(p(2.5) == doctest::Approx(1.0));
  double prev = p(0.0);
  for (int i = 1; i <= 600; ++i) {
    const double v = p(i * 0.01);
    CHECK(v >= prev - 1e-12);
    prev = v;
  }
}

TEST_CASE("BD-rate oracles") {
  RDCurve anchor = curve({{0.1, 30.0}, {0.2, 32.5}, {0.4, 35.1}, {0.8, 37.4}}, "anchor");
  CHECK(bd_rate(anchor, anchor) == doctest::Approx(0.0));
  RDCurve doubled = anchor;
  for (auto& p : doubled.points) p.bpp *= 2.0;
  CHECK(std::abs(bd_rate(doubled, anchor) - 100.0) < 1e-6);
  CHECK(std::abs(bd_rate(anchor, doubled) + 50.0) < 1e-6);

  RDCurve test = curve({{0.09, 30.4}, {0.17, 32.8}, {0.33, 35.0}, {0.7, 37.9}}, "test");
  // scipy PCHIP integration of the same fits.
  CHECK(bd_rate(test, anchor) == doctest::Approx(-19.11533037171941).epsilon(1e-10));
  const double dense = dense_bd_rate(test, anchor);
  CHECK(std::abs(bd_rate(test, anchor) - dense) <= 1e-4 * std::abs(dense));
  CHECK(std::abs((1 + bd_rate(test, anchor) / 100) * (1 + bd_rate(anchor, test) / 100) - 1) < 1e-6);

  RDCurve ts = test, as = anchor;
  for (auto& p : ts.points) p.quality += 3.7;
  for (auto& p : as.points) p.quality += 3.7;
  CHECK(bd_rate(ts, as) == doctest::Approx(bd_rate(test, anchor)).epsilon(1e-9));
}

TEST_CASE("BD-rate property sweep over random curves") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto make = [&] {
      std::vector<RDPoint> p;
      double r = rng.uniform(0.02, 0.1), q = rng.uniform(25.0, 30.0);
      for (int i = 0; i < 4 + static_cast<int>(rng.below(3)); ++i) {
        p.push_back({r, q});
        r *= rng.uniform(1.3, 2.5);
        q += rng.uniform(0.5, 3.0);
      }
      return curve(p);
    };
    RDCurve a = make(), b = make();
    double ab = 0.0, ba = 0.0;
    try {
      ab = bd_rate(a, b);
      ba = bd_rate(b, a);
    } catch (const MetricUndefined&) {
      continue;
    }
    CHECK(std::abs((1 + ab / 100) * (1 + ba / 100) - 1) < 1e-6);
    const double dense = dense_bd_rate(a, b);
    CHECK(std::abs(ab - dense) <= 1e-4 * std::max(std::abs(dense), 1.0));
  }
}

TEST_CASE("BD-rate preconditions") {
  RDCurve three = curve({{0.1, 30}, {0.2, 31}, {0.3, 32}});
  RDCurve four = curve({{0.1, 30}, {0.2, 31}, {0.3, 32}, {0.4, 33}});
  CHECK_THROWS_AS(bd_rate(three, four), MetricUndefined);
  RDCurve far = curve({{0.1, 40}, {0.2, 41}, {0.3, 42}, {0.4, 43}});
  CHECK_THROWS_AS(bd_rate(far, four), MetricUndefined);
  RDCurve zero = curve({{0.0, 30}, {0.2, 31}, {0.3, 32}, {0.4, 33}});
  CHECK_THROWS_AS(bd_rate(zero, four), MetricUndefined);
}

TEST_CASE("RD curve violations are reported, not fixed") {
  RDCurve c = curve({{0.1, 30}, {0.1, 31}, {0.3, 29}}, "x");
  auto v = c.violations();
  CHECK(v.size() == 2);
  CHECK(c.points[2].quality == 29);
  RDCurve ok = curve({{0.3, 32}, {0.1, 30}, {0.2, 31}});
  ok.sort_by_rate();
  CHECK(ok.points[0].bpp == 0.1);
  CHECK(ok.violations().empty());
}

TEST_CASE("RD table CSV round trip") {
  const auto p = std::filesystem::temp_directory_path() / "nlvc_test_metrics_rd.csv";
  std::vector<RDRow> rows{{"a", 0.1, 30.0, 0.9}, {"a", 0.2, 32.0, 0.95}, {"b", 0.15, 31.0, 0.93}};
  write_rd_csv(p, rows, "h1");
  auto back = read_rd_csv(p);
  REQUIRE(back.size() == 3);
  CHECK(back[1].psnr_db == 32.0);
  auto curves = rd_curves(back);
  CHECK(curves.size() == 2);
  CHECK(curves["a"].points.size() == 2);
  CHECK(rd_curves(back, true)["b"].points[0].quality == 0.93);
  std::filesystem::remove(p);
}
