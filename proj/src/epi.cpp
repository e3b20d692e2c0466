#include "epicodec/epi.hpp"

#include <json.hpp>

#include "epicodec/common.hpp"

namespace epicodec {

using nlohmann::json;

void MultiViewFrameSet::validate() const {
  if (K < 1) throw std::invalid_argument("frame set: need at least one view");
  if (int(frames.size()) != K) throw std::invalid_argument("frame set: view count mismatch");
  if (int(view_order.size()) != K)
    throw std::invalid_argument("frame set: view_order size mismatch");
  std::vector<bool> seen(size_t(K), false);
  for (int v : view_order) {
    if (v < 0 || v >= K || seen[size_t(v)])
      throw std::invalid_argument("frame set: view_order is not a permutation of 0..K-1");
    seen[size_t(v)] = true;
  }
  for (const auto& per_view : frames) {
    if (int(per_view.size()) != T_total)
      throw std::invalid_argument("frame set: frame count differs across views");
    for (const auto& img : per_view)
      if (img.w != M || img.h != N)
        throw std::invalid_argument("frame set: all views must share identical dimensions");
  }
}

StripGeometry make_geometry(const MultiViewFrameSet& fs, int L, int strip_width) {
  fs.validate();
  if (strip_width < 1) throw std::invalid_argument("strip width must be positive");
  if (fs.M % strip_width != 0)
    throw std::invalid_argument("frame width " + std::to_string(fs.M) +
                                " not divisible by strip width " + std::to_string(strip_width) +
                                "; rejected at ingestion");
  if (L < 1) throw std::invalid_argument("temporal stack depth L must be positive");
  StripGeometry g;
  g.strip_width = strip_width;
  g.m = fs.M / strip_width;
  g.L = L;
  g.K = fs.K;
  g.M = fs.M;
  g.N = fs.N;
  g.view_order = fs.view_order;
  int width = g.epi_width();
  int padded = (width + 2) / 3 * 3;  // smallest multiple of 3 >= width
  int pad = padded - width;
  g.pad_left = pad / 2;
  g.pad_right = pad - pad / 2;
  return g;
}

std::vector<Tensor<float>> build_spatial_epis(const MultiViewFrameSet& fs, int t,
                                              int strip_width) {
  if (t < 0 || t >= fs.T_total) throw std::invalid_argument("time index out of range");
  StripGeometry g = make_geometry(fs, 1, strip_width);
  std::vector<Tensor<float>> epis;
  epis.reserve(size_t(g.m));
  for (int j = 0; j < g.m; ++j) {
    Tensor<float> epi({1, fs.N, g.epi_width(), 3});
    for (int p = 0; p < fs.K; ++p) {
      const Image8& img = fs.frame(g.view_order[size_t(p)], t);
      for (int y = 0; y < fs.N; ++y)
        for (int dx = 0; dx < strip_width; ++dx)
          for (int c = 0; c < 3; ++c)
            epi.at(0, y, p * strip_width + dx, c) =
                pixel_to_unit(img.at(y, j * strip_width + dx, c));
    }
    epis.push_back(std::move(epi));
  }
  return epis;
}

EpiVolume build_spatio_temporal(const std::vector<std::vector<Tensor<float>>>& spatial_by_time,
                                int window, int j, const StripGeometry& geom) {
  if (int(spatial_by_time.size()) != geom.L)
    throw std::invalid_argument("need exactly L consecutive spatial EPI sets");
  EpiVolume vol;
  vol.j = j;
  vol.window = window;
  vol.geom = geom;
  vol.data = Tensor<float>({1, geom.N, geom.padded_width(), 3 * geom.L});
  for (int tau = 0; tau < geom.L; ++tau) {
    const Tensor<float>& epi = spatial_by_time[size_t(tau)][size_t(j)];
    for (int y = 0; y < geom.N; ++y)
      for (int x = 0; x < geom.epi_width(); ++x)
        for (int c = 0; c < 3; ++c)
          vol.data.at(0, y, x + geom.pad_left, 3 * tau + c) = epi.at(0, y, x, c);
  }
  return vol;
}

int window_count(const MultiViewFrameSet& fs, int L) { return fs.T_total / L; }

std::vector<EpiVolume> build_window(const MultiViewFrameSet& fs, int window,
                                    const StripGeometry& geom) {
  int t0 = window * geom.L;
  if (t0 + geom.L > fs.T_total)
    throw std::invalid_argument("window " + std::to_string(window) +
                                " has fewer than L frames remaining; dropped");
  std::vector<std::vector<Tensor<float>>> spatial;
  for (int tau = 0; tau < geom.L; ++tau)
    spatial.push_back(build_spatial_epis(fs, t0 + tau, geom.strip_width));
  std::vector<EpiVolume> out;
  out.reserve(size_t(geom.m));
  for (int j = 0; j < geom.m; ++j)
    out.push_back(build_spatio_temporal(spatial, window, j, geom));
  return out;
}

MultiViewFrameSet reassemble(const std::vector<EpiVolume>& window_volumes) {
  if (window_volumes.empty()) throw std::invalid_argument("reassemble: no volumes");
  const StripGeometry& g = window_volumes.front().geom;
  std::vector<const EpiVolume*> by_strip(size_t(g.m), nullptr);
  for (const auto& v : window_volumes) {
    if (v.geom.m != g.m || v.geom.K != g.K || v.geom.N != g.N || v.geom.L != g.L ||
        v.geom.strip_width != g.strip_width || v.window != window_volumes.front().window)
      throw std::invalid_argument("reassemble: inconsistent volume geometry");
    if (v.j < 0 || v.j >= g.m) throw std::invalid_argument("reassemble: strip index out of range");
    by_strip[size_t(v.j)] = &v;
  }
  for (int j = 0; j < g.m; ++j)
    if (!by_strip[size_t(j)])
      throw std::invalid_argument("reassemble: missing strip index " + std::to_string(j));

  MultiViewFrameSet fs;
  fs.K = g.K;
  fs.M = g.M;
  fs.N = g.N;
  fs.T_total = g.L;
  fs.view_order = g.view_order;
  fs.frames.assign(size_t(g.K), std::vector<Image8>(size_t(g.L), Image8(g.M, g.N)));

  for (int j = 0; j < g.m; ++j) {
    const Tensor<float>& data = by_strip[size_t(j)]->data;
    for (int p = 0; p < g.K; ++p) {
      int view = g.view_order[size_t(p)];
      for (int tau = 0; tau < g.L; ++tau) {
        Image8& img = fs.frame(view, tau);
        for (int y = 0; y < g.N; ++y)
          for (int dx = 0; dx < g.strip_width; ++dx)
            for (int c = 0; c < 3; ++c)
              img.at(y, j * g.strip_width + dx, c) =
                  unit_to_pixel(data.at(0, y, g.pad_left + p * g.strip_width + dx, 3 * tau + c));
      }
    }
  }
  return fs;
}

MultiViewFrameSet reassemble_all(const std::vector<std::vector<EpiVolume>>& volumes_by_window) {
  if (volumes_by_window.empty()) throw std::invalid_argument("reassemble_all: no windows");
  MultiViewFrameSet out = reassemble(volumes_by_window.front());
  for (size_t w = 1; w < volumes_by_window.size(); ++w) {
    MultiViewFrameSet part = reassemble(volumes_by_window[w]);
    for (int v = 0; v < out.K; ++v)
      for (auto& img : part.frames[size_t(v)])
        out.frames[size_t(v)].push_back(std::move(img));
    out.T_total += part.T_total;
  }
  return out;
}

void splice_views(MultiViewFrameSet& reconstructed,
                  const std::map<int, std::vector<Image8>>& reference_even_views) {
  for (int v = 0; v < reconstructed.K; v += 2)
    if (!reference_even_views.count(v))
      throw std::invalid_argument("splice: reference missing even view " + std::to_string(v));
  for (const auto& [v, ref] : reference_even_views) {
    if (v % 2 != 0 || v < 0 || v >= reconstructed.K)
      throw std::invalid_argument("splice: reference view " + std::to_string(v) +
                                  " is not an even view of this set");
    if (int(ref.size()) != reconstructed.T_total)
      throw std::invalid_argument("splice: reference frame count mismatch for view " +
                                  std::to_string(v));
    for (int t = 0; t < reconstructed.T_total; ++t) {
      const Image8& src = ref[size_t(t)];
      if (src.w != reconstructed.M || src.h != reconstructed.N)
        throw std::invalid_argument("splice: reference dimensions mismatch for view " +
                                    std::to_string(v));
      reconstructed.frame(v, t) = src;
    }
  }
}

// --- frame io -------------------------------------------------------------------

static std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06d.rgb24", t);
  return buf;
}
static std::string view_dir_name(int v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%02d", v);
  return buf;
}

void write_frame_set(const std::filesystem::path& dir, const MultiViewFrameSet& fs,
                     uint64_t config_hash, uint64_t seed) {
  fs.validate();
  std::filesystem::create_directories(dir / "views");
  for (int v = 0; v < fs.K; ++v) {
    auto vdir = dir / "views" / view_dir_name(v);
    std::filesystem::create_directories(vdir);
    for (int t = 0; t < fs.T_total; ++t)
      write_file(vdir / frame_name(t), fs.frame(v, t).rgb);
  }
  json j;
  j["format_version"] = 1;
  j["config_hash"] = hex64(config_hash);
  j["seed"] = seed;
  j["K"] = fs.K;
  j["M"] = fs.M;
  j["N"] = fs.N;
  j["frames"] = fs.T_total;
  j["fps"] = fs.fps;
  j["view_order"] = fs.view_order;
  json views = json::array();
  for (int v = 0; v < fs.K; ++v)
    views.push_back({{"format", "rgb24"}, {"path", "views/" + view_dir_name(v)}});
  j["views"] = views;
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

FrameManifest load_manifest(const std::filesystem::path& manifest_path) {
  json j = json::parse(read_text_file(manifest_path));
  FrameManifest m;
  m.K = j.at("K").get<int>();
  m.M = j.at("M").get<int>();
  m.N = j.at("N").get<int>();
  m.frames = j.at("frames").get<int>();
  m.fps = j.value("fps", 30.0);
  if (j.contains("view_order")) m.view_order = j.at("view_order").get<std::vector<int>>();
  else
    for (int v = 0; v < m.K; ++v) m.view_order.push_back(v);
  if (j.contains("config_hash"))
    m.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
  m.seed = j.value("seed", uint64_t(0));
  for (const auto& v : j.at("views")) {
    FrameManifest::View view;
    view.format = v.at("format").get<std::string>();
    view.path = v.at("path").get<std::string>();
    m.views.push_back(view);
  }
  if (int(m.views.size()) != m.K)
    throw std::invalid_argument("manifest: need one source per view");
  return m;
}

Image8 yuv420_to_rgb(const uint8_t* yp, const uint8_t* up, const uint8_t* vp, int w, int h) {
  Image8 img(w, h);
  int cw = w / 2;
  auto clip = [](int x) { return uint8_t(x < 0 ? 0 : (x > 255 ? 255 : x)); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int C = int(yp[size_t(y) * w + x]) - 16;
      int D = int(up[size_t(y / 2) * cw + x / 2]) - 128;
      int E = int(vp[size_t(y / 2) * cw + x / 2]) - 128;
      img.at(y, x, 0) = clip((298 * C + 409 * E + 128) >> 8);
      img.at(y, x, 1) = clip((298 * C - 100 * D - 208 * E + 128) >> 8);
      img.at(y, x, 2) = clip((298 * C + 516 * D + 128) >> 8);
    }
  return img;
}

MultiViewFrameSet load_frame_set(const std::filesystem::path& manifest_path) {
  FrameManifest m = load_manifest(manifest_path);
  auto base = manifest_path.parent_path();
  MultiViewFrameSet fs;
  fs.K = m.K;
  fs.M = m.M;
  fs.N = m.N;
  fs.T_total = m.frames;
  fs.fps = m.fps;
  fs.view_order = m.view_order;
  fs.frames.resize(size_t(m.K));
  for (int v = 0; v < m.K; ++v) {
    const auto& src = m.views[size_t(v)];
    auto path = base / src.path;
    if (src.format == "rgb24") {
      for (int t = 0; t < m.frames; ++t) {
        auto bytes = read_file(path / frame_name(t));
        if (int64_t(bytes.size()) != int64_t(m.M) * m.N * 3)
          throw std::invalid_argument("rgb24 frame has wrong size: " +
                                      (path / frame_name(t)).string());
        Image8 img(m.M, m.N);
        img.rgb = std::move(bytes);
        fs.frames[size_t(v)].push_back(std::move(img));
      }
    } else if (src.format == "yuv420p") {
      if (m.M % 2 != 0 || m.N % 2 != 0)
        throw std::invalid_argument("yuv420p requires even dimensions");
      auto bytes = read_file(path);
      size_t ysz = size_t(m.M) * m.N, csz = size_t(m.M / 2) * (m.N / 2);
      size_t frame_bytes = ysz + 2 * csz;
      if (bytes.size() < frame_bytes * size_t(m.frames))
        throw std::invalid_argument("yuv file too short: " + path.string());
      for (int t = 0; t < m.frames; ++t) {
        const uint8_t* base_p = bytes.data() + size_t(t) * frame_bytes;
        fs.frames[size_t(v)].push_back(
            yuv420_to_rgb(base_p, base_p + ysz, base_p + ysz + csz, m.M, m.N));
      }
    } else {
      throw std::invalid_argument("manifest: unknown view format '" + src.format + "'");
    }
  }
  fs.validate();
  return fs;
}

// --- EPI container ----------------------------------------------------------------

static constexpr char kEpivMagic[4] = {'E', 'P', 'I', 'V'};

void save_epi_window(const std::filesystem::path& path, const std::vector<EpiVolume>& volumes,
                     const EpiFileMeta& meta) {
  if (volumes.empty()) throw std::invalid_argument("save_epi_window: no volumes");
  const StripGeometry& g = volumes.front().geom;
  if (int(volumes.size()) != g.m)
    throw std::invalid_argument("save_epi_window: expected all m volumes of a window");
  ByteWriter w;
  w.raw(kEpivMagic, 4);
  w.u8(1);
  w.u64(meta.config_hash);
  w.u64(meta.seed);
  w.u32(uint32_t(g.K));
  w.u32(uint32_t(g.M));
  w.u32(uint32_t(g.N));
  w.u32(uint32_t(g.L));
  w.u32(uint32_t(g.m));
  w.u32(uint32_t(g.strip_width));
  w.u32(uint32_t(g.pad_left));
  w.u32(uint32_t(g.pad_right));
  w.u32(uint32_t(volumes.front().window));
  for (int v : g.view_order) w.u32(uint32_t(v));
  for (int j = 0; j < g.m; ++j) {
    const EpiVolume& vol = volumes[size_t(j)];
    if (vol.j != j) throw std::invalid_argument("save_epi_window: volumes must be in strip order");
    for (float f : vol.data.v) w.f32(f);
  }
  write_file(path, w.bytes);
}

std::vector<EpiVolume> load_epi_window(const std::filesystem::path& path, EpiFileMeta* meta) {
  auto bytes = read_file(path);
  ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kEpivMagic, 4) != 0)
    throw std::runtime_error("epi container: bad magic in " + path.string());
  if (r.u8() != 1) throw std::runtime_error("epi container: unsupported version");
  EpiFileMeta m;
  m.config_hash = r.u64();
  m.seed = r.u64();
  StripGeometry g;
  g.K = int(r.u32());
  g.M = int(r.u32());
  g.N = int(r.u32());
  g.L = int(r.u32());
  g.m = int(r.u32());
  g.strip_width = int(r.u32());
  g.pad_left = int(r.u32());
  g.pad_right = int(r.u32());
  int window = int(r.u32());
  g.view_order.resize(size_t(g.K));
  for (auto& v : g.view_order) v = int(r.u32());
  if (meta) *meta = m;
  std::vector<EpiVolume> out;
  out.reserve(size_t(g.m));
  for (int j = 0; j < g.m; ++j) {
    EpiVolume vol;
    vol.j = j;
    vol.window = window;
    vol.geom = g;
    vol.data = Tensor<float>({1, g.N, g.padded_width(), 3 * g.L});
    for (auto& f : vol.data.v) f = r.f32();
    out.push_back(std::move(vol));
  }
  return out;
}

}  // namespace epicodec
