#include "nlvc/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "nlvc/sequence_io.hpp"

namespace nlvc {

namespace {

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape() || a.rank() != 3) {
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

double mse_between(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("mse: shape mismatch");
  auto av = a.values(), bv = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  return s / static_cast<double>(av.size());
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  check_pair(a, b, "psnr");
  const std::size_t c = a.dim(0), plane = a.dim(1) * a.dim(2);
  auto av = a.values(), bv = b.values();
  double total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = ch * plane; i < (ch + 1) * plane; ++i) {
      s += (av[i] - bv[i]) * (av[i] - bv[i]);
    }
    const double m = s / static_cast<double>(plane);
    total += m > 0.0 ? std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m)) : kPsnrCap;
  }
  return total / static_cast<double>(c);
}

// ---- MS-SSIM ----------------------------------------------------------------

namespace {

constexpr double kMsSsimWeights[kMsSsimMaxScales] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::vector<double> gaussian_window(std::size_t n) {
  std::vector<double> w(n);
  const double c = 0.5 * static_cast<double>(n - 1);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    s += w[i];
  }
  for (double& e : w) e /= s;
  return w;
}

// "valid" separable filtering of an h×w plane.
std::vector<double> filter_valid(const std::vector<double>& p, std::size_t h, std::size_t w,
                                 const std::vector<double>& wy, const std::vector<double>& wx) {
  const std::size_t oh = h - wy.size() + 1, ow = w - wx.size() + 1;
  std::vector<double> tmp(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < wx.size(); ++k) s += wx[k] * p[y * w + x + k];
      tmp[y * ow + x] = s;
    }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < wy.size(); ++k) s += wy[k] * tmp[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

struct SsimTerms {
  double cs;
  double ssim;
};

SsimTerms ssim_terms(const std::vector<double>& a, const std::vector<double>& b, std::size_t h,
                     std::size_t w) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  // Frames smaller than the window use a truncated window along that axis.
  const auto wy = gaussian_window(std::min(kSsimWindow, h));
  const auto wx = gaussian_window(std::min(kSsimWindow, w));
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w, wy, wx), mu_b = filter_valid(b, h, w, wy, wx);
  const auto s_aa = filter_valid(aa, h, w, wy, wx), s_bb = filter_valid(bb, h, w, wy, wx);
  const auto s_ab = filter_valid(ab, h, w, wy, wx);
  double cs_sum = 0.0, ssim_sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = s_aa[i] - mu_a[i] * mu_a[i];
    const double vb = s_bb[i] - mu_b[i] * mu_b[i];
    const double cov = s_ab[i] - mu_a[i] * mu_b[i];
    const double cs = (2.0 * cov + c2) / (va + vb + c2);
    const double l = (2.0 * mu_a[i] * mu_b[i] + c1) / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1);
    cs_sum += cs;
    ssim_sum += l * cs;
  }
  const double n = static_cast<double>(mu_a.size());
  return {cs_sum / n, ssim_sum / n};
}

std::vector<double> downsample2(const std::vector<double>& p, std::size_t h, std::size_t w) {
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      out[y * ow + x] = 0.25 * (p[2 * y * w + 2 * x] + p[2 * y * w + 2 * x + 1] +
                                p[(2 * y + 1) * w + 2 * x] + p[(2 * y + 1) * w + 2 * x + 1]);
  return out;
}

}  // namespace

std::size_t ms_ssim_scales(std::size_t min_side) {
  std::size_t m = 0;
  while (m < kMsSsimMaxScales && min_side > (kSsimWindow - 1) * (std::size_t{1} << m)) ++m;
  return m;
}

MsSsimResult ms_ssim_detailed(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "ms_ssim");
  const std::size_t c = a.dim(0), h0 = a.dim(1), w0 = a.dim(2);
  const std::size_t m = ms_ssim_scales(std::min(h0, w0));
  if (m == 0) throw DimensionError("ms_ssim: frame " + shape_str(a.shape()) + " too small");
  double wsum = 0.0;
  for (std::size_t j = 0; j < m; ++j) wsum += kMsSsimWeights[j];
  double total = 0.0;
  auto av = a.values(), bv = b.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::size_t h = h0, w = w0;
    std::vector<double> pa(av.begin() + static_cast<long>(ch * h * w),
                           av.begin() + static_cast<long>((ch + 1) * h * w));
    std::vector<double> pb(bv.begin() + static_cast<long>(ch * h * w),
                           bv.begin() + static_cast<long>((ch + 1) * h * w));
    double prod = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      const SsimTerms t = ssim_terms(pa, pb, h, w);
      const double term = j + 1 == m ? t.ssim : t.cs;
      prod *= std::pow(std::max(term, 0.0), kMsSsimWeights[j] / wsum);
      if (j + 1 < m) {
        pa = downsample2(pa, h, w);
        pb = downsample2(pb, h, w);
        h /= 2;
        w /= 2;
      }
    }
    total += prod;
  }
  return {total / static_cast<double>(c), m};
}

double ms_ssim(const Tensor& a, const Tensor& b) { return ms_ssim_detailed(a, b).value; }

// ---- RD curves & BD-rate ------------------------------------------------------

void RDCurve::sort_by_rate() {
  std::stable_sort(points.begin(), points.end(),
                   [](const RDPoint& p, const RDPoint& q) { return p.bpp < q.bpp; });
}

std::vector<std::string> RDCurve::violations() const {
  std::vector<std::string> out;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (!(points[i].bpp > points[i - 1].bpp)) {
      out.push_back(label + ": bpp not strictly increasing at point " + std::to_string(i));
    }
    if (points[i].quality < points[i - 1].quality) {
      out.push_back(label + ": quality decreases at point " + std::to_string(i));
    }
  }
  return out;
}

Pchip::Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
  const std::size_t n = x_.size();
  if (n < 2 || y_.size() != n) throw InputError("pchip needs at least two matching points");
  for (std::size_t i = 1; i < n; ++i) {
    if (!(x_[i] > x_[i - 1])) throw MetricUndefined("pchip abscissae must be strictly increasing");
  }
  std::vector<double> h(n - 1), delta(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    h[k] = x_[k + 1] - x_[k];
    delta[k] = (y_[k + 1] - y_[k]) / h[k];
  }
  d_.assign(n, 0.0);
  if (n == 2) {
    d_[0] = d_[1] = delta[0];
    return;
  }
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (delta[k - 1] * delta[k] <= 0.0) continue;
    const double w1 = 2.0 * h[k] + h[k - 1], w2 = h[k] + 2.0 * h[k - 1];
    d_[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
  }
  auto sign = [](double v) { return (v > 0.0) - (v < 0.0); };
  auto edge = [&](double h0, double h1, double m0, double m1) {
    double d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if (sign(d) != sign(m0)) {
      d = 0.0;
    } else if (sign(m0) != sign(m1) && std::abs(d) > 3.0 * std::abs(m0)) {
      d = 3.0 * m0;
    }
    return d;
  };
  d_[0] = edge(h[0], h[1], delta[0], delta[1]);
  d_[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
}

std::size_t Pchip::segment(double x) const {
  auto it = std::upper_bound(x_.begin(), x_.end(), x);
  std::size_t k = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
  return std::min(k, x_.size() - 2);
}

double Pchip::operator()(double x) const {
  const std::size_t k = segment(x);
  const double h = x_[k + 1] - x_[k];
  const double t = (x - x_[k]) / h;
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * y_[k] + (t3 - 2 * t2 + t) * h * d_[k] +
         (-2 * t3 + 3 * t2) * y_[k + 1] + (t3 - t2) * h * d_[k + 1];
}

double Pchip::segment_integral(std::size_t k, double t0, double t1) const {
  const double h = x_[k + 1] - x_[k];
  // Antiderivatives of the cubic Hermite basis functions.
  auto F = [&](double t) {
    const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
    return (t - t3 + 0.5 * t4) * y_[k] + (0.5 * t2 - 2.0 * t3 / 3.0 + 0.25 * t4) * h * d_[k] +
           (t3 - 0.5 * t4) * y_[k + 1] + (-t3 / 3.0 + 0.25 * t4) * h * d_[k + 1];
  };
  return h * (F(t1) - F(t0));
}

double Pchip::integral(double a, double b) const {
  if (a > b) return -integral(b, a);
  if (a < x_.front() - 1e-12 || b > x_.back() + 1e-12) {
    throw MetricUndefined("pchip integral outside the data range");
  }
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < x_.size(); ++k) {
    const double lo = std::max(a, x_[k]), hi = std::min(b, x_[k + 1]);
    if (hi <= lo) continue;
    const double h = x_[k + 1] - x_[k];
    s += segment_integral(k, (lo - x_[k]) / h, (hi - x_[k]) / h);
  }
  return s;
}

namespace {

Pchip log_rate_vs_quality(const RDCurve& c) {
  if (c.points.size() < 4) {
    throw MetricUndefined("BD-rate needs at least 4 points (" + c.label + " has " +
                          std::to_string(c.points.size()) + ")");
  }
  std::vector<RDPoint> p = c.points;
  std::sort(p.begin(), p.end(),
            [](const RDPoint& a, const RDPoint& b) { return a.quality < b.quality; });
  std::vector<double> q, r;
  for (const auto& e : p) {
    if (!(e.bpp > 0.0)) throw MetricUndefined("BD-rate needs positive rates");
    q.push_back(e.quality);
    r.push_back(std::log10(e.bpp));
  }
  return Pchip(std::move(q), std::move(r));
}

std::pair<double, double> quality_range(const RDCurve& c) {
  auto [lo, hi] = std::minmax_element(
      c.points.begin(), c.points.end(),
      [](const RDPoint& a, const RDPoint& b) { return a.quality < b.quality; });
  return {lo->quality, hi->quality};
}

}  // namespace

double bd_rate(const RDCurve& test, const RDCurve& anchor) {
  const Pchip ft = log_rate_vs_quality(test);
  const Pchip fa = log_rate_vs_quality(anchor);
  const auto [tl, th] = quality_range(test);
  const auto [al, ah] = quality_range(anchor);
  const double lo = std::max(tl, al), hi = std::min(th, ah);
  if (!(hi > lo)) throw MetricUndefined("BD-rate: quality ranges do not overlap");
  const double avg = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
  return 100.0 * (std::pow(10.0, avg) - 1.0);
}

// ---- RD tables --------------------------------------------------------------

void write_rd_csv(const std::filesystem::path& path, const std::vector<RDRow>& rows,
                  const std::string& config_hash) {
  ResultTable t;
  t.config_hash = config_hash;
  t.columns = {"label", "bpp", "psnr_db", "msssim"};
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) t.rows.push_back({r.label, num(r.bpp), num(r.psnr_db), num(r.msssim)});
  write_results(path, t);
}

std::vector<RDRow> read_rd_csv(const std::filesystem::path& path) {
  const ResultTable t = read_results(path);
  auto col = [&](const std::string& name) {
    auto it = std::find(t.columns.begin(), t.columns.end(), name);
    if (it == t.columns.end()) throw InputError(path.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - t.columns.begin());
  };
  const std::size_t cl = col("label"), cb = col("bpp"), cp = col("psnr_db"), cm = col("msssim");
  std::vector<RDRow> rows;
  for (const auto& r : t.rows) {
    try {
      rows.push_back({r[cl], std::stod(r[cb]), std::stod(r[cp]), std::stod(r[cm])});
    } catch (const std::exception&) {
      throw InputError(path.string() + ": non-numeric RD value");
    }
  }
  return rows;
}

std::map<std::string, RDCurve> rd_curves(const std::vector<RDRow>& rows, bool use_msssim) {
  std::map<std::string, RDCurve> out;
  for (const auto& r : rows) {
    auto& c = out[r.label];
    c.label = r.label;
    c.points.push_back({r.bpp, use_msssim ? r.msssim : r.psnr_db});
  }
  for (auto& [_, c] : out) c.sort_by_rate();
  return out;
}

}  // namespace nlvc
