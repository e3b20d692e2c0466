#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epicodec/tensor.hpp"

namespace epicodec {

struct Image8 {
  int w = 0, h = 0;
  std::vector<uint8_t> rgb;  // row-major, interleaved RGB

  Image8() = default;
  Image8(int width, int height) : w(width), h(height), rgb(size_t(width) * height * 3, 0) {}
  uint8_t& at(int y, int x, int c) { return rgb[(size_t(y) * w + x) * 3 + size_t(c)]; }
  uint8_t at(int y, int x, int c) const { return rgb[(size_t(y) * w + x) * 3 + size_t(c)]; }
  bool operator==(const Image8&) const = default;
};

// K rectified views of identical geometry, 8-bit RGB.
struct MultiViewFrameSet {
  int K = 0, M = 0, N = 0, T_total = 0;
  double fps = 30.0;
  std::vector<int> view_order;                 // stacking order, permutation of 0..K-1
  std::vector<std::vector<Image8>> frames;     // [view][time]

  const Image8& frame(int view, int t) const { return frames[size_t(view)][size_t(t)]; }
  Image8& frame(int view, int t) { return frames[size_t(view)][size_t(t)]; }
  void validate() const;
};

struct StripGeometry {
  int strip_width = 8;
  int m = 0;  // M / strip_width
  int L = 3;
  int K = 0, M = 0, N = 0;
  std::vector<int> view_order;
  int pad_left = 0, pad_right = 0;

  int epi_width() const { return strip_width * K; }              // 8K
  int padded_width() const { return epi_width() + pad_left + pad_right; }  // 8K_pad
};

// One spatio-temporal EPI: strip j of every view, stacked along width in view
// order, L consecutive time steps concatenated on channels, width zero-padded
// to the next multiple of 3.
struct EpiVolume {
  int j = 0;
  int window = 0;  // start time = window * L
  StripGeometry geom;
  Tensor<float> data;  // (1, N, padded_width, 3L), values in [0,1]
};

StripGeometry make_geometry(const MultiViewFrameSet& fs, int L, int strip_width = 8);

// Spatial EPIs for one time step: m tensors of shape (1, N, 8K, 3), unpadded.
std::vector<Tensor<float>> build_spatial_epis(const MultiViewFrameSet& fs, int t,
                                              int strip_width = 8);

EpiVolume build_spatio_temporal(const std::vector<std::vector<Tensor<float>>>& spatial_by_time,
                                int window, int j, const StripGeometry& geom);

// Non-overlapping temporal windows; a trailing partial window is dropped.
int window_count(const MultiViewFrameSet& fs, int L);
std::vector<EpiVolume> build_window(const MultiViewFrameSet& fs, int window,
                                    const StripGeometry& geom);

// Exact inverse of construction for one window: padding cropped, strips routed
// back to (view, strip, time), values clamped to [0,1] and requantized to 8 bit.
MultiViewFrameSet reassemble(const std::vector<EpiVolume>& window_volumes);

// Assemble every window back into one frame set (T = windows * L).
MultiViewFrameSet reassemble_all(const std::vector<std::vector<EpiVolume>>& volumes_by_window);

// Replace even-index views with externally decoded reference frames.
void splice_views(MultiViewFrameSet& reconstructed,
                  const std::map<int, std::vector<Image8>>& reference_even_views);

// --- pixel scaling ------------------------------------------------------------

inline float pixel_to_unit(uint8_t u) { return float(u) / 255.0f; }
inline uint8_t unit_to_pixel(float x) {
  float c = x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x);
  return uint8_t(std::lround(double(c) * 255.0));
}

// --- file formats ---------------------------------------------------------------

// JSON manifest + per-view frame sources (directory of .rgb24 frames or one
// planar YUV 4:2:0 file per view).
struct FrameManifest {
  int K = 0, M = 0, N = 0, frames = 0;
  double fps = 30.0;
  std::vector<int> view_order;
  struct View {
    std::string format;  // "rgb24" | "yuv420p"
    std::string path;    // relative to the manifest
  };
  std::vector<View> views;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};

void write_frame_set(const std::filesystem::path& dir, const MultiViewFrameSet& fs,
                     uint64_t config_hash, uint64_t seed);
MultiViewFrameSet load_frame_set(const std::filesystem::path& manifest_path);
FrameManifest load_manifest(const std::filesystem::path& manifest_path);

Image8 yuv420_to_rgb(const uint8_t* y, const uint8_t* u, const uint8_t* v, int w, int h);

// Binary EPI container holding the m volumes of one temporal window.
struct EpiFileMeta {
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};
void save_epi_window(const std::filesystem::path& path, const std::vector<EpiVolume>& volumes,
                     const EpiFileMeta& meta);
std::vector<EpiVolume> load_epi_window(const std::filesystem::path& path, EpiFileMeta* meta = nullptr);

}  // namespace epicodec
