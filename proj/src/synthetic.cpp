#include "epicodec/training.hpp"

#include "epicodec/common.hpp"

namespace epicodec {

namespace {

// smooth value noise: random lattice values, bilinear between them
struct ValueNoise {
  int cells;
  std::vector<double> lattice;
  int lw, lh;

  ValueNoise(int width, int height, int cell, uint64_t seed, int channel) : cells(cell) {
    lw = width / cell + 2;
    lh = height / cell + 2;
    Rng rng(seed * 1315423911ull + uint64_t(channel) * 2654435761ull + 97);
    lattice.resize(size_t(lw) * lh);
    for (auto& v : lattice) v = rng.uniform();
  }

  double at(int x, int y) const {
    double fx = double(x) / cells, fy = double(y) / cells;
    int x0 = int(fx), y0 = int(fy);
    double tx = fx - x0, ty = fy - y0;
    auto l = [&](int xi, int yi) { return lattice[size_t(yi) * lw + size_t(xi)]; };
    double a = l(x0, y0) * (1 - tx) + l(x0 + 1, y0) * tx;
    double b = l(x0, y0 + 1) * (1 - tx) + l(x0 + 1, y0 + 1) * tx;
    return a * (1 - ty) + b * ty;
  }
};

uint8_t to_u8(double v) { return uint8_t(std::lround(std::min(255.0, std::max(0.0, v)))); }

}  // namespace

MultiViewFrameSet make_synthetic_dataset(const SyntheticSceneSpec& spec) {
  if (spec.K < 1 || spec.M < 8 || spec.N < 1 || spec.frames < 1)
    throw std::invalid_argument("synthetic scene: bad dimensions");

  // foreground layers must stay inside the frame for every (view, time)
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& l = spec.layers[li];
    for (int v = 0; v < spec.K; ++v)
      for (int t = 0; t < spec.frames; ++t) {
        int shift = v * l.disparity + t * l.velocity;
        if (l.x + shift < 0 || l.x + l.w + shift > spec.M || l.y < 0 || l.y + l.h > spec.N)
          throw std::invalid_argument("synthetic scene: layer " + std::to_string(li) +
                                      " shifts out of frame at view " + std::to_string(v) +
                                      ", frame " + std::to_string(t));
      }
  }

  // background canvas wide enough for every view's window
  int bg_span = (spec.K - 1) * std::abs(spec.background_disparity);
  int canvas_w = spec.M + bg_span;
  std::vector<ValueNoise> bg;
  bg.reserve(3);
  for (int c = 0; c < 3; ++c)
    bg.emplace_back(canvas_w, spec.N, spec.background_cells, spec.background_seed, c);

  MultiViewFrameSet fs;
  fs.K = spec.K;
  fs.M = spec.M;
  fs.N = spec.N;
  fs.T_total = spec.frames;
  fs.fps = spec.fps;
  for (int v = 0; v < spec.K; ++v) fs.view_order.push_back(v);
  fs.frames.assign(size_t(spec.K), {});

  for (int v = 0; v < spec.K; ++v) {
    // background slides opposite to foreground parallax direction
    int bg_off = spec.background_disparity >= 0
                     ? v * spec.background_disparity
                     : (spec.K - 1 - v) * (-spec.background_disparity);
    for (int t = 0; t < spec.frames; ++t) {
      Image8 img(spec.M, spec.N);
      for (int y = 0; y < spec.N; ++y)
        for (int x = 0; x < spec.M; ++x)
          for (int c = 0; c < 3; ++c)
            img.at(y, x, c) = to_u8(40.0 + 170.0 * bg[size_t(c)].at(x + bg_off, y));

      for (const auto& l : spec.layers) {
        int shift = v * l.disparity + t * l.velocity;
        ValueNoise tex_r(l.w, l.h, 4, l.seed, 0), tex_g(l.w, l.h, 4, l.seed, 1),
            tex_b(l.w, l.h, 4, l.seed, 2);
        for (int y = 0; y < l.h; ++y)
          for (int x = 0; x < l.w; ++x) {
            double amp = 255.0 * l.noise;
            img.at(l.y + y, l.x + x + shift, 0) = to_u8(l.r + amp * (tex_r.at(x, y) - 0.5));
            img.at(l.y + y, l.x + x + shift, 1) = to_u8(l.g + amp * (tex_g.at(x, y) - 0.5));
            img.at(l.y + y, l.x + x + shift, 2) = to_u8(l.b + amp * (tex_b.at(x, y) - 0.5));
          }
      }
      fs.frames[size_t(v)].push_back(std::move(img));
    }
  }
  fs.validate();
  return fs;
}

}  // namespace epicodec
