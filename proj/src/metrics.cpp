#include "epicodec/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace epicodec {

double psnr_image_db(const Image8& a, const Image8& b, double cap) {
  if (a.w != b.w || a.h != b.h)
    throw std::invalid_argument("psnr: shape mismatch");
  double sum = 0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    double d = double(a.rgb[i]) - double(b.rgb[i]);
    sum += d * d;
  }
  double mse = sum / double(a.rgb.size());
  if (mse <= 0) return cap;
  return std::min(cap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double psnr_db(const MultiViewFrameSet& a, const MultiViewFrameSet& b, double cap) {
  if (a.K != b.K || a.T_total != b.T_total)
    throw std::invalid_argument("psnr: frame-set shape mismatch");
  double sum = 0;
  int64_t n = 0;
  for (int v = 0; v < a.K; ++v)
    for (int t = 0; t < a.T_total; ++t) {
      sum += psnr_image_db(a.frame(v, t), b.frame(v, t), cap);
      ++n;
    }
  return sum / double(n);
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255) * (0.01 * 255);
constexpr double kC2 = (0.03 * 255) * (0.03 * 255);

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWin);
  double sum = 0;
  for (int i = 0; i < kWin; ++i) {
    double d = i - (kWin - 1) / 2.0;
    k[size_t(i)] = std::exp(-d * d / (2 * kSigma * kSigma));
    sum += k[size_t(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

std::vector<double> luma(const Image8& img) {
  std::vector<double> y(size_t(img.w) * img.h);
  for (int i = 0; i < img.w * img.h; ++i)
    y[size_t(i)] = 0.299 * img.rgb[size_t(i) * 3] + 0.587 * img.rgb[size_t(i) * 3 + 1] +
                   0.114 * img.rgb[size_t(i) * 3 + 2];
  return y;
}

// separable valid-region Gaussian filter
std::vector<double> filter_valid(const std::vector<double>& in, int w, int h,
                                 const std::vector<double>& k, int& ow, int& oh) {
  ow = w - kWin + 1;
  oh = h - kWin + 1;
  std::vector<double> tmp(size_t(ow) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < kWin; ++i) acc += k[size_t(i)] * in[size_t(y) * w + size_t(x + i)];
      tmp[size_t(y) * ow + size_t(x)] = acc;
    }
  std::vector<double> out(size_t(ow) * oh, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < kWin; ++i) acc += k[size_t(i)] * tmp[size_t(y + i) * ow + size_t(x)];
      out[size_t(y) * ow + size_t(x)] = acc;
    }
  return out;
}

}  // namespace

double ssim_image(const Image8& a, const Image8& b) {
  if (a.w != b.w || a.h != b.h)
    throw std::invalid_argument("ssim: shape mismatch");
  if (a.w < kWin || a.h < kWin)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  auto k = gaussian_kernel();
  auto xa = luma(a), xb = luma(b);
  size_t n = xa.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (size_t i = 0; i < n; ++i) {
    aa[i] = xa[i] * xa[i];
    bb[i] = xb[i] * xb[i];
    ab[i] = xa[i] * xb[i];
  }
  int ow, oh;
  auto mu1 = filter_valid(xa, a.w, a.h, k, ow, oh);
  auto mu2 = filter_valid(xb, a.w, a.h, k, ow, oh);
  auto s11 = filter_valid(aa, a.w, a.h, k, ow, oh);
  auto s22 = filter_valid(bb, a.w, a.h, k, ow, oh);
  auto s12 = filter_valid(ab, a.w, a.h, k, ow, oh);
  double acc = 0;
  for (size_t i = 0; i < mu1.size(); ++i) {
    double m1 = mu1[i], m2 = mu2[i];
    double v1 = s11[i] - m1 * m1, v2 = s22[i] - m2 * m2, cov = s12[i] - m1 * m2;
    acc += ((2 * m1 * m2 + kC1) * (2 * cov + kC2)) /
           ((m1 * m1 + m2 * m2 + kC1) * (v1 + v2 + kC2));
  }
  return acc / double(mu1.size());
}

double ssim(const MultiViewFrameSet& a, const MultiViewFrameSet& b) {
  if (a.K != b.K || a.T_total != b.T_total)
    throw std::invalid_argument("ssim: frame-set shape mismatch");
  double sum = 0;
  int64_t n = 0;
  for (int v = 0; v < a.K; ++v)
    for (int t = 0; t < a.T_total; ++t) {
      sum += ssim_image(a.frame(v, t), b.frame(v, t));
      ++n;
    }
  return sum / double(n);
}

RateAccount rate_account(const std::vector<uint64_t>& bitstream_bytes, uint64_t reference_bits,
                         int64_t pixels, double fps, int64_t frames) {
  if (bitstream_bytes.empty()) throw std::invalid_argument("rate_account: no bitstreams");
  if (pixels <= 0) throw std::invalid_argument("rate_account: zero pixels");
  if (frames <= 0) throw std::invalid_argument("rate_account: zero frames");
  RateAccount r;
  for (uint64_t b : bitstream_bytes) r.si_bits += b * 8;
  r.reference_bits = reference_bits;
  r.total_bits = r.si_bits + reference_bits;
  r.bpp = double(r.total_bits) / double(pixels);
  r.kbps = double(r.total_bits) * fps / (double(frames) * 1000.0);
  return r;
}

double epi_psnr_db(const EpiVolume& ref, const Tensor<float>& reconstruction, double cap) {
  const StripGeometry& g = ref.geom;
  if (reconstruction.shape.h != ref.data.shape.h ||
      reconstruction.shape.w != ref.data.shape.w || reconstruction.shape.c != ref.data.shape.c)
    throw std::invalid_argument("epi_psnr: shape mismatch");
  double sum = 0;
  int64_t n = 0;
  for (int y = 0; y < g.N; ++y)
    for (int x = g.pad_left; x < g.pad_left + g.epi_width(); ++x)
      for (int c = 0; c < 3 * g.L; ++c) {
        double d = double(unit_to_pixel(ref.data.at(0, y, x, c))) -
                   double(unit_to_pixel(reconstruction.at(0, y, x, c)));
        sum += d * d;
        ++n;
      }
  double mse = sum / double(n);
  if (mse <= 0) return cap;
  return std::min(cap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

}  // namespace epicodec
