#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace epicodec {

struct RDPoint {
  std::string label;
  double rate_bpp = 0;
  double rate_kbps = 0;
  double psnr_db = 0;
  double ssim = 0;
};

// Rate-distortion curve: >= 4 points with strictly increasing rates.
struct RDCurve {
  std::vector<RDPoint> points;
  bool quality_monotone = false;  // PSNR nondecreasing with rate

  static RDCurve from_points(std::vector<RDPoint> pts, bool require_four = true);
};

enum class QualityKey { Psnr, Ssim };

struct BDResult {
  double bd_rate_percent = 0;  // average rate difference at equal quality
  double bd_quality = 0;       // average quality difference at equal rate
  double quality_overlap_lo = 0, quality_overlap_hi = 0;  // integrated for BD-rate
  double log_rate_overlap_lo = 0, log_rate_overlap_hi = 0;  // integrated for BD-quality
};

// Cubic polynomial fit of quality vs log10(rate) (and the inverse fit for the
// rate delta), integrated over the overlapping range; the SSIM-keyed variants
// are the same procedure with SSIM as the quality axis.
BDResult bd_metrics(const RDCurve& curve_a, const RDCurve& curve_b, QualityKey key);

// least-squares cubic c0 + c1 x + c2 x^2 + c3 x^3 (interpolating at 4 points)
std::vector<double> fit_cubic(const std::vector<double>& x, const std::vector<double>& y);
double eval_poly(const std::vector<double>& c, double x);
double integrate_poly(const std::vector<double>& c, double lo, double hi);

void write_rd_csv(const std::filesystem::path& path, const RDCurve& curve);
RDCurve read_rd_csv(const std::filesystem::path& path, bool require_four = true);

}  // namespace epicodec
