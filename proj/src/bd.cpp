#include "epicodec/bd.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "epicodec/common.hpp"

namespace epicodec {

RDCurve RDCurve::from_points(std::vector<RDPoint> pts, bool require_four) {
  if (require_four && pts.size() < 4)
    throw std::invalid_argument("rd curve: need at least 4 points, have " +
                                std::to_string(pts.size()));
  std::sort(pts.begin(), pts.end(),
            [](const RDPoint& a, const RDPoint& b) { return a.rate_bpp < b.rate_bpp; });
  for (size_t i = 1; i < pts.size(); ++i)
    if (!(pts[i].rate_bpp > pts[i - 1].rate_bpp))
      throw std::invalid_argument("rd curve: rates must be strictly increasing");
  for (const auto& p : pts)
    if (!(p.rate_bpp > 0)) throw std::invalid_argument("rd curve: rates must be positive");
  RDCurve c;
  c.quality_monotone = true;
  for (size_t i = 1; i < pts.size(); ++i)
    if (pts[i].psnr_db < pts[i - 1].psnr_db) c.quality_monotone = false;
  c.points = std::move(pts);
  return c;
}

std::vector<double> fit_cubic(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 4)
    throw std::invalid_argument("fit_cubic: need >= 4 samples");
  // normal equations for a degree-3 least-squares fit
  double a[4][5] = {};
  for (size_t i = 0; i < x.size(); ++i) {
    double p[4] = {1, x[i], x[i] * x[i], x[i] * x[i] * x[i]};
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) a[r][c] += p[r] * p[c];
      a[r][4] += p[r] * y[i];
    }
  }
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    for (int c = 0; c < 5; ++c) std::swap(a[col][c], a[pivot][c]);
    if (std::abs(a[col][col]) < 1e-12)
      throw std::invalid_argument("fit_cubic: singular system (duplicate abscissae?)");
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      double f = a[r][col] / a[col][col];
      for (int c = col; c < 5; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> coef(4);
  for (int r = 0; r < 4; ++r) coef[size_t(r)] = a[r][4] / a[r][r];
  return coef;
}

double eval_poly(const std::vector<double>& c, double x) {
  double acc = 0;
  for (size_t i = c.size(); i-- > 0;) acc = acc * x + c[i];
  return acc;
}

double integrate_poly(const std::vector<double>& c, double lo, double hi) {
  auto anti = [&](double x) {
    double acc = 0;
    for (size_t i = c.size(); i-- > 0;) acc = acc * x + c[i] / double(i + 1);
    return acc * x;
  };
  return anti(hi) - anti(lo);
}

namespace {

double quality_of(const RDPoint& p, QualityKey key) {
  return key == QualityKey::Psnr ? p.psnr_db : p.ssim;
}

}  // namespace

BDResult bd_metrics(const RDCurve& curve_a, const RDCurve& curve_b, QualityKey key) {
  if (curve_a.points.size() < 4 || curve_b.points.size() < 4)
    throw std::invalid_argument("bd_metrics: both curves need at least 4 points");
  auto extract = [&](const RDCurve& c) {
    std::pair<std::vector<double>, std::vector<double>> xy;  // (log10 rate, quality)
    for (const auto& p : c.points) {
      xy.first.push_back(std::log10(p.rate_bpp));
      xy.second.push_back(quality_of(p, key));
    }
    return xy;
  };
  auto [ra, qa] = extract(curve_a);
  auto [rb, qb] = extract(curve_b);

  BDResult out;

  // BD-quality: quality as cubic in log10(rate), integrated over rate overlap
  {
    double lo = std::max(*std::min_element(ra.begin(), ra.end()),
                         *std::min_element(rb.begin(), rb.end()));
    double hi = std::min(*std::max_element(ra.begin(), ra.end()),
                         *std::max_element(rb.begin(), rb.end()));
    if (!(hi > lo)) {
      std::ostringstream os;
      os << "bd_metrics: rate ranges do not overlap: A=[" << std::pow(10, ra.front()) << ","
         << std::pow(10, ra.back()) << "] bpp vs B=[" << std::pow(10, rb.front()) << ","
         << std::pow(10, rb.back()) << "] bpp";
      throw std::invalid_argument(os.str());
    }
    auto pa = fit_cubic(ra, qa);
    auto pb = fit_cubic(rb, qb);
    out.bd_quality = (integrate_poly(pb, lo, hi) - integrate_poly(pa, lo, hi)) / (hi - lo);
    out.log_rate_overlap_lo = lo;
    out.log_rate_overlap_hi = hi;
  }

  // BD-rate: log10(rate) as cubic in quality, integrated over quality overlap
  {
    double lo = std::max(*std::min_element(qa.begin(), qa.end()),
                         *std::min_element(qb.begin(), qb.end()));
    double hi = std::min(*std::max_element(qa.begin(), qa.end()),
                         *std::max_element(qb.begin(), qb.end()));
    if (!(hi > lo)) {
      std::ostringstream os;
      os << "bd_metrics: quality ranges do not overlap: A=[" << qa.front() << "," << qa.back()
         << "] vs B=[" << qb.front() << "," << qb.back() << "]";
      throw std::invalid_argument(os.str());
    }
    auto pa = fit_cubic(qa, ra);
    auto pb = fit_cubic(qb, rb);
    double avg = (integrate_poly(pb, lo, hi) - integrate_poly(pa, lo, hi)) / (hi - lo);
    out.bd_rate_percent = (std::pow(10.0, avg) - 1.0) * 100.0;
    out.quality_overlap_lo = lo;
    out.quality_overlap_hi = hi;
  }
  return out;
}

void write_rd_csv(const std::filesystem::path& path, const RDCurve& curve) {
  std::string s = "label,rate_bpp,rate_kbps,psnr_db,ssim\n";
  char buf[256];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g\n", p.label.c_str(), p.rate_bpp,
                  p.rate_kbps, p.psnr_db, p.ssim);
    s += buf;
  }
  write_text_file(path, s);
}

RDCurve read_rd_csv(const std::filesystem::path& path, bool require_four) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("label,", 0) != 0)
    throw std::invalid_argument("rd csv: missing header in " + path.string());
  std::vector<RDPoint> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    RDPoint p;
    std::string field;
    std::getline(ls, p.label, ',');
    std::getline(ls, field, ',');
    p.rate_bpp = std::stod(field);
    std::getline(ls, field, ',');
    p.rate_kbps = std::stod(field);
    std::getline(ls, field, ',');
    p.psnr_db = std::stod(field);
    std::getline(ls, field, ',');
    p.ssim = std::stod(field);
    pts.push_back(std::move(p));
  }
  return RDCurve::from_points(std::move(pts), require_four);
}

}  // namespace epicodec
