#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "epicodec/common.hpp"
#include "epicodec/metrics.hpp"

using namespace epicodec;

namespace {

Image8 random_image(Rng& rng, int w, int h) {
  Image8 img(w, h);
  for (auto& b : img.rgb) b = uint8_t(rng.uniform_int(256));
  return img;
}

Image8 smooth_image(Rng& rng, int w, int h) {
  // mid-contrast gradient plus noise, for the inverted-image ssim check
  Image8 img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) =
            uint8_t(std::clamp(64.0 + 128.0 * x / w + 24.0 * rng.uniform(), 0.0, 255.0));
  return img;
}

// direct per-window SSIM, independent of the separable-filter implementation
double ssim_oracle(const Image8& a, const Image8& b) {
  const int win = 11;
  const double sigma = 1.5;
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  double kernel[11][11];
  double ksum = 0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      double dy = i - 5.0, dx = j - 5.0;
      kernel[i][j] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      ksum += kernel[i][j];
    }
  for (auto& row : kernel)
    for (auto& v : row) v /= ksum;

  auto luma = [](const Image8& img, int y, int x) {
    return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
  };
  double acc = 0;
  int count = 0;
  for (int y = 0; y + win <= a.h; ++y)
    for (int x = 0; x + win <= a.w; ++x) {
      double m1 = 0, m2 = 0, s11 = 0, s22 = 0, s12 = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          double va = luma(a, y + i, x + j), vb = luma(b, y + i, x + j);
          m1 += kernel[i][j] * va;
          m2 += kernel[i][j] * vb;
          s11 += kernel[i][j] * va * va;
          s22 += kernel[i][j] * vb * vb;
          s12 += kernel[i][j] * va * vb;
        }
      double v1 = s11 - m1 * m1, v2 = s22 - m2 * m2, cov = s12 - m1 * m2;
      acc += ((2 * m1 * m2 + c1) * (2 * cov + c2)) / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
      ++count;
    }
  return acc / count;
}

MultiViewFrameSet wrap(std::vector<std::vector<Image8>> frames) {
  MultiViewFrameSet fs;
  fs.K = int(frames.size());
  fs.M = frames[0][0].w;
  fs.N = frames[0][0].h;
  fs.T_total = int(frames[0].size());
  for (int v = 0; v < fs.K; ++v) fs.view_order.push_back(v);
  fs.frames = std::move(frames);
  return fs;
}

}  // namespace

TEST_CASE("psnr: identical frames cap at 99 dB; extreme and unit MSE endpoints") {
  Rng rng(1);
  auto img = random_image(rng, 32, 24);
  CHECK(psnr_image_db(img, img) == 99.0);

  // MSE = 255^2: black vs white
  Image8 black(16, 16), white(16, 16);
  for (auto& b : white.rgb) b = 255;
  CHECK(psnr_image_db(black, white) == doctest::Approx(0.0).epsilon(1e-12));

  // uniform error of one level: MSE = 1 -> 20*log10(255) = 48.1308 dB
  Image8 off = img;
  for (auto& b : off.rgb) b = uint8_t(b < 255 ? b + 1 : b - 1);
  CHECK(psnr_image_db(img, off) == doctest::Approx(48.1308).epsilon(1e-4));

  Image8 wrong(8, 16);
  CHECK_THROWS_AS(psnr_image_db(img, wrong), std::invalid_argument);
}

TEST_CASE("psnr over a frame set averages per-view per-frame values and is order-invariant") {
  Rng rng(2);
  auto a0 = random_image(rng, 24, 16), a1 = random_image(rng, 24, 16);
  auto b0 = random_image(rng, 24, 16), b1 = random_image(rng, 24, 16);
  auto fs_a = wrap({{a0, a1}});
  auto fs_b = wrap({{b0, b1}});
  double expect = (psnr_image_db(a0, b0) + psnr_image_db(a1, b1)) / 2;
  CHECK(psnr_db(fs_a, fs_b) == doctest::Approx(expect).epsilon(1e-12));
  auto fs_a_swapped = wrap({{a1, a0}});
  auto fs_b_swapped = wrap({{b1, b0}});
  CHECK(psnr_db(fs_a_swapped, fs_b_swapped) == doctest::Approx(psnr_db(fs_a, fs_b)).epsilon(1e-12));
}

TEST_CASE("ssim: identity, inverted image, symmetry, window guard, oracle agreement") {
  Rng rng(3);
  auto img = smooth_image(rng, 48, 32);
  CHECK(ssim_image(img, img) == doctest::Approx(1.0).epsilon(1e-12));

  Image8 inverted = img;
  for (auto& b : inverted.rgb) b = uint8_t(255 - b);
  double s_inv = ssim_image(img, inverted);
  CHECK(s_inv < 0.1);
  CHECK(s_inv == doctest::Approx(ssim_oracle(img, inverted)).epsilon(1e-9));

  auto other = smooth_image(rng, 48, 32);
  CHECK(ssim_image(img, other) == doctest::Approx(ssim_image(other, img)).epsilon(1e-12));
  CHECK(ssim_image(img, other) == doctest::Approx(ssim_oracle(img, other)).epsilon(1e-9));

  Image8 tiny(10, 10);
  CHECK_THROWS_WITH_AS(ssim_image(tiny, tiny), doctest::Contains("window"),
                       std::invalid_argument);
}

TEST_CASE("rate accounting: arithmetic, linearity, bookkeeping, guards") {
  auto r = rate_account({1000}, 0, 1000000, 30.0, 30);
  CHECK(r.bpp == doctest::Approx(0.008).epsilon(1e-12));
  CHECK(r.kbps == doctest::Approx(1000.0 * 8 * 30 / (30 * 1000.0)).epsilon(1e-12));

  auto r2 = rate_account({1000, 1000}, 0, 1000000, 30.0, 30);
  CHECK(r2.bpp == doctest::Approx(2 * r.bpp).epsilon(1e-12));

  auto r3 = rate_account({1000}, 4096, 1000000, 30.0, 30);
  CHECK(r3.reference_bits == 4096);
  CHECK(r3.total_bits == r.si_bits + 4096);

  CHECK_THROWS_AS(rate_account({}, 0, 100, 30.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(rate_account({10}, 0, 0, 30.0, 1), std::invalid_argument);
}

TEST_CASE("lossless even-view reference path reports the configured psnr cap") {
  Rng rng(4);
  auto img = random_image(rng, 16, 12);
  auto fs = wrap({{img}});
  CHECK(psnr_db(fs, fs, 99.0) == 99.0);
  CHECK(psnr_db(fs, fs, 60.0) == 60.0);  // configurable cap
}
