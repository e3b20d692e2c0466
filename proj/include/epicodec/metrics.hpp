#pragma once

#include <cstdint>
#include <vector>

#include "epicodec/epi.hpp"

namespace epicodec {

// PSNR in the 8-bit domain: 10*log10(255^2 / MSE) over all color channels,
// capped for lossless content. Frame-set PSNR is the mean of per-(view, frame)
// values, matching the rate-distortion curve convention.
double psnr_image_db(const Image8& a, const Image8& b, double cap = 99.0);
double psnr_db(const MultiViewFrameSet& a, const MultiViewFrameSet& b, double cap = 99.0);

// Mean local SSIM on the luma channel, 11x11 Gaussian window (sigma 1.5),
// C1=(0.01*255)^2, C2=(0.03*255)^2, valid-window positions only.
double ssim_image(const Image8& a, const Image8& b);
double ssim(const MultiViewFrameSet& a, const MultiViewFrameSet& b);

struct RateAccount {
  uint64_t si_bits = 0;         // latent bitstream bytes * 8
  uint64_t reference_bits = 0;  // reference-path bits (reported separately by default)
  uint64_t total_bits = 0;
  double bpp = 0;
  double kbps = 0;
};

RateAccount rate_account(const std::vector<uint64_t>& bitstream_bytes, uint64_t reference_bits,
                         int64_t pixels, double fps, int64_t frames);

// Per-EPI reconstruction PSNR over the unpadded region, 8-bit domain.
double epi_psnr_db(const EpiVolume& ref, const Tensor<float>& reconstruction, double cap = 99.0);

}  // namespace epicodec
