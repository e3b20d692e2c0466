#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "epicodec/epi.hpp"
#include "epicodec/networks.hpp"
#include "epicodec/quantizer.hpp"

namespace epicodec {

struct LossWeights {
  double alpha = 1.0;   // distortion weight in the encoder loss
  double beta = 1e-6;   // rate weight in the encoder loss
  bool use_feature_loss = true;
};

struct TrainConfig {
  int epochs = 10;
  int iterations = 200;  // samples per epoch; steps per epoch = iterations / batchsize
  int batchsize = 1;
  double base_lr = 1e-4;
  double decay_rate = 0.95;
  int pretrain_steps = 500;
  int checkpoint_every = 0;  // steps between mid-run checkpoints; 0 = final only
  bool non_saturating = false;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::string resume_from;
};

// Layered synthetic multi-view scene: a value-noise background plus textured
// rectangles, each translated horizontally by view disparity and per-frame
// velocity (rectified cameras, pure horizontal shifts).
struct SyntheticLayer {
  int x = 8, y = 8, w = 24, h = 16;
  int disparity = 2;  // px per view
  int velocity = 0;   // px per frame
  int r = 200, g = 80, b = 60;
  double noise = 0.15;  // texture amplitude relative to 255
  uint64_t seed = 1;
};

struct SyntheticSceneSpec {
  int K = 3, M = 64, N = 48, frames = 3;
  double fps = 30.0;
  uint64_t background_seed = 7;
  int background_disparity = 1;  // px per view
  int background_cells = 8;      // value-noise cell size in px
  std::vector<SyntheticLayer> layers;
};

MultiViewFrameSet make_synthetic_dataset(const SyntheticSceneSpec& spec);

// All Algorithm-style training paths wired into one graph:
//   z = E(x); zq = soft_quantize(z); xhat = G(zq)
//   d_loss  = -mean[log D(x,z) + log(1 - D(xhat,zq))]
//   g_adv   = mean log(1 - D(xhat,zq))        (or -mean log D(xhat,zq))
//   g_loss  = g_adv + d(x, xhat)
//   e_loss  = g_adv + alpha*d(x, xhat) + beta*H(zq-soft)
// plus a quantizer-bypass reconstruction for warmup and an injected-latent
// generator application for the decode path.
template <typename T>
struct TrainingGraph {
  Graph<T> g;
  int x = -1;          // input EPI batch
  int z = -1;          // E(x)
  int zq = -1;         // soft-quantized latent
  int xhat = -1;       // G(zq)
  int xhat_pre = -1;   // G(z), quantizer bypass (warmup)
  int z_in = -1;       // injected latent input
  int xhat_dec = -1;   // G(z_in), decode path
  int d_real = -1, d_fake = -1;
  int d_loss = -1, g_adv = -1, g_loss = -1, e_loss = -1;
  int distortion = -1, distortion_pre = -1, rate = -1;
  std::vector<int> e_params, g_params, d_params;
};

template <typename T>
int build_distortion(Graph<T>& g, const FeatureNet<T>& phi, int a, int b, bool use_features) {
  int d = g.sub(a, b);
  int mse = g.reduce_mean(g.mul(d, d), ReduceAxes::all());
  if (!use_features) return mse;
  int fa = apply_feature_net(g, phi, a);
  int fb = apply_feature_net(g, phi, b);
  int fd = g.sub(fa, fb);
  int fmse = g.reduce_mean(g.mul(fd, fd), ReduceAxes::all());
  return g.add(mse, fmse);
}

// d_loss and the generator-side adversarial value from the two discriminator
// scores; log arguments are clamped at 1e-12.
template <typename T>
std::pair<int, int> build_gan_value(Graph<T>& g, int d_real, int d_fake, bool non_saturating) {
  const double eps = 1e-12;
  int log_dr = g.log_floor(d_real, eps);
  int log_1mdf = g.log_floor(g.add_scalar(g.scale(d_fake, -1.0), 1.0), eps);
  int d_loss = g.scale(g.reduce_mean(g.add(log_dr, log_1mdf), ReduceAxes::all()), -1.0);
  int g_adv = non_saturating
                  ? g.scale(g.reduce_mean(g.log_floor(d_fake, eps), ReduceAxes::all()), -1.0)
                  : g.reduce_mean(log_1mdf, ReduceAxes::all());
  return {d_loss, g_adv};
}

template <typename T>
std::unique_ptr<TrainingGraph<T>> build_training_graph(Shape epi_shape,
                                                       const NetworkConfig& ncfg,
                                                       const QuantizerSpec& quant,
                                                       const LossWeights& lw,
                                                       bool non_saturating, Rng& rng) {
  auto tg = std::make_unique<TrainingGraph<T>>();
  Graph<T>& g = tg->g;
  int channels = epi_shape.c;
  tg->x = g.input("x", epi_shape);

  EncoderNet<T> enc = make_encoder(g, channels, ncfg, rng);
  GeneratorNet<T> gen = make_generator(g, channels, ncfg, rng);
  DiscriminatorNet<T> disc = make_discriminator(g, channels, channels, ncfg, rng);
  FeatureNet<T> phi = make_feature_net(g, channels, ncfg.feature_net);
  tg->e_params = enc.params;
  tg->g_params = gen.params;
  tg->d_params = disc.params;

  tg->z = apply_encoder(g, enc, tg->x);
  tg->zq = g.soft_quantize(tg->z, quant, "zq");
  tg->xhat = apply_generator(g, gen, tg->zq);
  tg->d_real = apply_discriminator(g, disc, tg->x, tg->z);
  tg->d_fake = apply_discriminator(g, disc, tg->xhat, tg->zq);

  auto [d_loss, g_adv] = build_gan_value(g, tg->d_real, tg->d_fake, non_saturating);
  tg->d_loss = d_loss;
  tg->g_adv = g_adv;
  tg->distortion = build_distortion(g, phi, tg->x, tg->xhat, lw.use_feature_loss);
  tg->rate = g.rate_entropy(tg->z, quant, "rate");
  tg->g_loss = g.add(tg->g_adv, tg->distortion);
  tg->e_loss =
      g.add(g.add(tg->g_adv, g.scale(tg->distortion, lw.alpha)), g.scale(tg->rate, lw.beta));

  // quantizer-bypass warmup path
  tg->xhat_pre = apply_generator(g, gen, tg->z);
  tg->distortion_pre = build_distortion(g, phi, tg->x, tg->xhat_pre, lw.use_feature_loss);

  // decode path: generator applied to an injected (dequantized) latent
  tg->z_in = g.input("z_in", g.shape(tg->z));
  tg->xhat_dec = apply_generator(g, gen, tg->z_in);

  g.mark_output("z", tg->z);
  g.mark_output("xhat", tg->xhat);
  g.mark_output("xhat_dec", tg->xhat_dec);
  return tg;
}

// --- training loop -----------------------------------------------------------

struct TrainerSetup {
  TrainConfig train;
  LossWeights loss;
  NetworkConfig networks;
  QuantizerSpec quant;
  int L = 3;
  uint64_t seed = 1;
  uint64_t model_hash = 0;
};

struct TrainSummary {
  int64_t steps = 0;
  double step0_distortion = 0;
  double final_distortion = 0;
  double final_psnr_db = 0;  // inference-mode hard-quantized reconstruction
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
};

TrainSummary train_loop(const TrainerSetup& setup, const std::vector<EpiVolume>& dataset,
                        const std::filesystem::path& out_dir);

}  // namespace epicodec
