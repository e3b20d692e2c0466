#include "epicodec/pipeline.hpp"

#include <iostream>

#include "epicodec/bitstream.hpp"
#include "epicodec/checkpoint.hpp"
#include "epicodec/common.hpp"

namespace epicodec {

using nlohmann::json;

namespace {

std::string window_file(int w) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epi_w%04d.epiv", w);
  return buf;
}
std::string si_file(int w, int j) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "si_w%04d_j%03d.epic", w, j);
  return buf;
}

struct EpiIndex {
  int windows = 0;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};

EpiIndex read_epi_index(const std::filesystem::path& dir) {
  json j = json::parse(read_text_file(dir / "index.json"));
  EpiIndex ix;
  ix.windows = j.at("windows").get<int>();
  ix.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
  ix.seed = j.at("seed").get<uint64_t>();
  return ix;
}

std::vector<std::vector<EpiVolume>> load_epi_dataset(const ExperimentConfig& cfg,
                                                     const StagePaths& sp) {
  EpiIndex ix = read_epi_index(sp.epi_dir());
  if (ix.config_hash != cfg.dataset_hash())
    throw HashMismatchError("EPI containers in " + sp.epi_dir().string() +
                            " were built under a different dataset configuration");
  std::vector<std::vector<EpiVolume>> windows;
  for (int w = 0; w < ix.windows; ++w)
    windows.push_back(load_epi_window(sp.epi_dir() / window_file(w)));
  return windows;
}

// inference-mode codec state rebuilt from a checkpoint
struct CodecRuntime {
  std::unique_ptr<TrainingGraph<float>> tg;
  QuantizerSpec quant;

  static CodecRuntime load(const ExperimentConfig& cfg, Shape vol_shape,
                           const std::filesystem::path& ck_path) {
    CodecRuntime rt;
    rt.quant = cfg.quantizer.to_spec();
    Checkpoint ck = load_checkpoint(ck_path);
    if (ck.model_hash != cfg.model_hash())
      throw HashMismatchError("checkpoint " + ck_path.string() +
                              " does not match this configuration (hash " +
                              hex64(ck.model_hash) + " != " + hex64(cfg.model_hash()) + ")");
    Rng rng(cfg.seed);
    rt.tg = build_training_graph<float>(vol_shape, cfg.networks, rt.quant, cfg.loss,
                                        cfg.train.non_saturating, rng);
    AdamState<float> d, g, e;
    std::vector<std::pair<std::string, AdamState<float>*>> groups{{"D", &d}, {"G", &g}, {"E", &e}};
    std::vector<std::vector<int>> ids{rt.tg->d_params, rt.tg->g_params, rt.tg->e_params};
    restore_graph(rt.tg->g, ck, groups, ids);
    rt.tg->g.set_mode(cfg.networks.bn_inference == "running"
                          ? Graph<float>::BnMode::EvalRunning
                          : Graph<float>::BnMode::EvalPerSample);
    return rt;
  }

  Tensor<int32_t> encode_volume(const EpiVolume& vol) {
    tg->g.set_input(tg->x, vol.data);
    tg->g.forward({tg->z});
    return hard_quantize(tg->g.value(tg->z), quant);
  }

  Tensor<float> decode_latent(const Tensor<int32_t>& indices, const QuantizerSpec& spec) {
    tg->g.set_input(tg->z_in, dequantize<float>(indices, spec));
    tg->g.forward({tg->xhat_dec});
    return tg->g.value(tg->xhat_dec);
  }
};

}  // namespace

MultiViewFrameSet source_frames(const ExperimentConfig& cfg, const StagePaths& sp) {
  if (cfg.dataset.kind == "manifest") return load_frame_set(cfg.dataset.manifest);
  auto manifest = sp.data() / "manifest.json";
  if (!std::filesystem::exists(manifest))
    throw std::runtime_error("no frames at " + manifest.string() + "; run synth-data first");
  FrameManifest m = load_manifest(manifest);
  if (m.config_hash != cfg.dataset_hash())
    throw HashMismatchError("frames in " + sp.data().string() +
                            " were generated under a different dataset configuration");
  return load_frame_set(manifest);
}

void run_synth_data(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  if (cfg.dataset.kind != "synthetic")
    throw ConfigError("dataset.kind", "synth-data needs a synthetic dataset");
  StagePaths sp{out};
  MultiViewFrameSet fs = make_synthetic_dataset(cfg.dataset.synthetic);
  write_frame_set(sp.data(), fs, cfg.dataset_hash(), cfg.seed);
}

void run_build_epi(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  StagePaths sp{out};
  MultiViewFrameSet fs = source_frames(cfg, sp);
  StripGeometry geom = make_geometry(fs, cfg.epi.L, cfg.epi.strip_width);
  std::filesystem::create_directories(sp.epi_dir());
  int windows = window_count(fs, cfg.epi.L);
  if (windows < 1) throw std::runtime_error("build-epi: not enough frames for one window");
  for (int w = 0; w < windows; ++w)
    save_epi_window(sp.epi_dir() / window_file(w), build_window(fs, w, geom),
                    {cfg.dataset_hash(), cfg.seed});
  json ix{{"format_version", 1},
          {"config_hash", hex64(cfg.dataset_hash())},
          {"seed", cfg.seed},
          {"windows", windows},
          {"strips", geom.m}};
  write_text_file(sp.epi_dir() / "index.json", ix.dump(2) + "\n");
}

TrainSummary run_train(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  StagePaths sp{out};
  auto windows = load_epi_dataset(cfg, sp);
  std::vector<EpiVolume> dataset;
  for (auto& w : windows)
    for (auto& v : w) dataset.push_back(std::move(v));
  TrainerSetup setup;
  setup.train = cfg.train;
  setup.loss = cfg.loss;
  setup.networks = cfg.networks;
  setup.quant = cfg.quantizer.to_spec();
  setup.L = cfg.epi.L;
  setup.seed = cfg.seed;
  setup.model_hash = cfg.model_hash();
  return train_loop(setup, dataset, sp.train_dir());
}

void run_encode(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  StagePaths sp{out};
  auto windows = load_epi_dataset(cfg, sp);
  if (windows.empty()) throw std::runtime_error("encode: no EPI windows");
  const StripGeometry& geom = windows.front().front().geom;
  Shape vol_shape = windows.front().front().data.shape;
  CodecRuntime rt = CodecRuntime::load(cfg, vol_shape, sp.train_dir() / "checkpoint.epck");

  std::filesystem::create_directories(sp.bitstream_dir());
  json files = json::array();
  for (size_t w = 0; w < windows.size(); ++w)
    for (const auto& vol : windows[w]) {
      Bitstream bs = encode_bitstream(rt.encode_volume(vol), rt.quant);
      auto name = si_file(int(w), vol.j);
      write_file(sp.bitstream_dir() / name, bs.bytes);
      files.push_back(name);
    }
  json mj{{"format_version", 1},
          {"config_hash", hex64(cfg.model_hash())},
          {"seed", cfg.seed},
          {"windows", int(windows.size())},
          {"strips", geom.m},
          {"K", geom.K},
          {"M", geom.M},
          {"N", geom.N},
          {"L", geom.L},
          {"strip_width", geom.strip_width},
          {"pad_left", geom.pad_left},
          {"pad_right", geom.pad_right},
          {"view_order", geom.view_order},
          {"files", files}};
  write_text_file(sp.bitstream_dir() / "manifest.json", mj.dump(2) + "\n");
}

void run_decode(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  StagePaths sp{out};
  json mj = json::parse(read_text_file(sp.bitstream_dir() / "manifest.json"));
  uint64_t stream_hash = std::stoull(mj.at("config_hash").get<std::string>(), nullptr, 16);
  if (stream_hash != cfg.model_hash())
    throw HashMismatchError("bitstreams in " + sp.bitstream_dir().string() +
                            " were encoded under a different configuration");

  StripGeometry geom;
  geom.K = mj.at("K").get<int>();
  geom.M = mj.at("M").get<int>();
  geom.N = mj.at("N").get<int>();
  geom.L = mj.at("L").get<int>();
  geom.strip_width = mj.at("strip_width").get<int>();
  geom.m = geom.M / geom.strip_width;
  geom.pad_left = mj.at("pad_left").get<int>();
  geom.pad_right = mj.at("pad_right").get<int>();
  geom.view_order = mj.at("view_order").get<std::vector<int>>();
  int windows = mj.at("windows").get<int>();

  Shape vol_shape{1, geom.N, geom.padded_width(), 3 * geom.L};
  CodecRuntime rt = CodecRuntime::load(cfg, vol_shape, sp.train_dir() / "checkpoint.epck");
  QuantizerSpec cfg_spec = cfg.quantizer.to_spec();

  std::vector<std::vector<EpiVolume>> rec;
  rec.resize(size_t(windows));
  for (int w = 0; w < windows; ++w)
    for (int j = 0; j < geom.m; ++j) {
      auto bytes = read_file(sp.bitstream_dir() / si_file(w, j));
      DecodedBitstream dec = decode_bitstream(bytes);
      if (dec.spec.levels != cfg_spec.levels)
        throw BitstreamError(BitstreamError::Kind::TableMismatch,
                             "bitstream quantizer level count disagrees with the configuration");
      EpiVolume vol;
      vol.j = j;
      vol.window = w;
      vol.geom = geom;
      vol.data = rt.decode_latent(dec.indices, dec.spec);
      rec[size_t(w)].push_back(std::move(vol));
    }

  MultiViewFrameSet out_fs = reassemble_all(rec);
  // lossless pass-through reference path for the even views
  MultiViewFrameSet src = source_frames(cfg, sp);
  std::map<int, std::vector<Image8>> reference;
  for (int v = 0; v < src.K; v += 2) {
    auto& frames = reference[v];
    for (int t = 0; t < out_fs.T_total; ++t) frames.push_back(src.frame(v, t));
  }
  splice_views(out_fs, reference);
  out_fs.fps = src.fps;
  write_frame_set(sp.decoded_dir(), out_fs, cfg.dataset_hash(), cfg.seed);
}

void run_chain(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  StagePaths sp{out};
  if (cfg.dataset.kind == "synthetic" && !std::filesystem::exists(sp.data() / "manifest.json"))
    run_synth_data(cfg, out);
  if (!std::filesystem::exists(sp.epi_dir() / "index.json")) run_build_epi(cfg, out);
  if (!std::filesystem::exists(sp.train_dir() / "checkpoint.epck")) run_train(cfg, out);
  if (!std::filesystem::exists(sp.bitstream_dir() / "manifest.json")) run_encode(cfg, out);
  if (!std::filesystem::exists(sp.decoded_dir() / "manifest.json")) run_decode(cfg, out);
}

RDCurve run_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  if (cfg.evaluate.operating_points.empty())
    throw ConfigError("evaluate.operating_points", "need at least one operating point");
  std::vector<RDPoint> pts;
  json report = json::array();
  for (const auto& op : cfg.evaluate.operating_points) {
    json cj = cfg.to_json();
    for (const auto& [path, value] : op.overrides.items())
      apply_override(cj, path + "=" + value.dump());
    ExperimentConfig sub = ExperimentConfig::from_json(cj);
    std::filesystem::path sub_out = out / ("op_" + op.label);
    run_chain(sub, sub_out);

    StagePaths sp{sub_out};
    MultiViewFrameSet src = source_frames(sub, sp);
    MultiViewFrameSet dec = load_frame_set(sp.decoded_dir() / "manifest.json");
    // decoded covers whole windows only
    src.T_total = dec.T_total;
    for (auto& view : src.frames) view.resize(size_t(dec.T_total));

    json mj = json::parse(read_text_file(sp.bitstream_dir() / "manifest.json"));
    std::vector<uint64_t> sizes;
    for (const auto& f : mj.at("files"))
      sizes.push_back(std::filesystem::file_size(sp.bitstream_dir() / f.get<std::string>()));
    uint64_t even_view_bytes = 0;
    for (int v = 0; v < src.K; v += 2)
      even_view_bytes += uint64_t(src.M) * src.N * 3 * uint64_t(dec.T_total);
    uint64_t reference_bits = sub.evaluate.count_reference_bits ? even_view_bytes * 8 : 0;
    int64_t pixels = int64_t(src.K) * src.M * src.N * dec.T_total;
    RateAccount rate = rate_account(sizes, reference_bits, pixels, src.fps, dec.T_total);

    RDPoint p;
    p.label = op.label;
    p.rate_bpp = rate.bpp;
    p.rate_kbps = rate.kbps;
    p.psnr_db = psnr_db(src, dec, sub.evaluate.psnr_cap);
    p.ssim = ssim(src, dec);
    pts.push_back(p);

    report.push_back({{"label", op.label},
                      {"si_bits", rate.si_bits},
                      {"reference_bits_reported", even_view_bytes * 8},
                      {"reference_bits_counted", reference_bits},
                      {"rate_bpp", p.rate_bpp},
                      {"rate_kbps", p.rate_kbps},
                      {"psnr_db", p.psnr_db},
                      {"ssim", p.ssim},
                      {"model_hash", hex64(sub.model_hash())}});
  }
  RDCurve curve = RDCurve::from_points(std::move(pts), false);
  write_rd_csv(out / "rd_curve.csv", curve);
  json rj{{"format_version", 1}, {"seed", cfg.seed}, {"points", report}};
  write_text_file(out / "evaluate_report.json", rj.dump(2) + "\n");
  return curve;
}

BDResult run_bdstats(const std::filesystem::path& curve_a, const std::filesystem::path& curve_b,
                     const std::filesystem::path& out) {
  RDCurve a = read_rd_csv(curve_a);
  RDCurve b = read_rd_csv(curve_b);
  BDResult psnr = bd_metrics(a, b, QualityKey::Psnr);
  BDResult ss = bd_metrics(a, b, QualityKey::Ssim);
  std::filesystem::create_directories(out);
  char buf[512];
  std::string csv =
      "quality_key,bd_rate_percent,bd_quality,quality_overlap_lo,quality_overlap_hi,"
      "log_rate_overlap_lo,log_rate_overlap_hi\n";
  std::snprintf(buf, sizeof(buf), "psnr,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                psnr.bd_rate_percent, psnr.bd_quality, psnr.quality_overlap_lo,
                psnr.quality_overlap_hi, psnr.log_rate_overlap_lo, psnr.log_rate_overlap_hi);
  csv += buf;
  std::snprintf(buf, sizeof(buf), "ssim,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                ss.bd_rate_percent, ss.bd_quality, ss.quality_overlap_lo, ss.quality_overlap_hi,
                ss.log_rate_overlap_lo, ss.log_rate_overlap_hi);
  csv += buf;
  write_text_file(out / "bd.csv", csv);

  std::printf("metric   BD-rate %%   BD-quality\n");
  std::printf("PSNR   %10.4f   %10.4f dB\n", psnr.bd_rate_percent, psnr.bd_quality);
  std::printf("SSIM   %10.4f   %10.6f\n", ss.bd_rate_percent, ss.bd_quality);
  return psnr;
}

}  // namespace epicodec
