#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nlvc/tensor.hpp"

namespace nlvc {

inline constexpr double kPsnrCap = 99.0;

double mse_between(const Tensor& a, const Tensor& b);
// Per-channel PSNR averaged over channels; each channel capped at kPsnrCap.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

struct MsSsimResult {
  double value = 1.0;
  std::size_t scales = 0;  // < 5 when the frame is too small for the full pyramid
};

inline constexpr std::size_t kMsSsimMaxScales = 5;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Scales used for a frame whose shorter side is `min_side` (0 if unusable).
std::size_t ms_ssim_scales(std::size_t min_side);
// Peak-1 inputs, per-channel MS-SSIM averaged over channels.
MsSsimResult ms_ssim_detailed(const Tensor& a, const Tensor& b);
double ms_ssim(const Tensor& a, const Tensor& b);

struct RDPoint {
  double bpp = 0.0;
  double quality = 0.0;
};

struct RDCurve {
  std::string label;
  std::vector<RDPoint> points;

  void sort_by_rate();
  // Human-readable descriptions of ordering problems; empty when well formed.
  std::vector<std::string> violations() const;
};

// Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson slopes with
// the usual one-sided end conditions).
class Pchip {
 public:
  Pchip(std::vector<double> x, std::vector<double> y);
  double operator()(double x) const;
  // Exact integral of the interpolant over [a, b] within the data range.
  double integral(double a, double b) const;
  const std::vector<double>& slopes() const { return d_; }

 private:
  std::size_t segment(double x) const;
  double segment_integral(std::size_t k, double t0, double t1) const;

  std::vector<double> x_, y_, d_;
};

// Average bit-rate difference of `test` vs `anchor` at equal quality, percent.
// Throws MetricUndefined when the quality ranges do not overlap.
double bd_rate(const RDCurve& test, const RDCurve& anchor);

struct RDRow {
  std::string label;
  double bpp = 0.0;
  double psnr_db = 0.0;
  double msssim = 0.0;
};

void write_rd_csv(const std::filesystem::path& path, const std::vector<RDRow>& rows,
                  const std::string& config_hash = "");
std::vector<RDRow> read_rd_csv(const std::filesystem::path& path);
// Groups rows by label; quality is psnr_db or msssim.
std::map<std::string, RDCurve> rd_curves(const std::vector<RDRow>& rows, bool use_msssim = false);

}  // namespace nlvc
