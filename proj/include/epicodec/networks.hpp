#pragma once

#include <string>
#include <vector>

#include "epicodec/common.hpp"
#include "epicodec/graph.hpp"

namespace epicodec {

struct FeatureNetConfig {
  int channels = 16;
  int depth = 3;
  uint64_t seed = 9091;
};

struct NetworkConfig {
  int base_channels = 32;  // encoder / generator width
  int disc_channels = 16;  // discriminator first-stage width
  int residual_blocks = 4;
  int stride_stage = 0;    // encoder conv carrying the stride-3 stage (0 = first)
  int first_kernel = 7;    // encoder first conv kernel (odd)
  int up_kernel = 7;       // generator transpose-conv kernel (k = 2*pad + 3)
  // batch-norm statistics at the deployed encode/decode ends: "per_sample"
  // (normalize by the current activations, the behavior batchsize-1 training
  // exercises) or "running" (momentum-0.9 accumulators)
  std::string bn_inference = "per_sample";
  FeatureNetConfig feature_net;
};

// Fan-in scaled uniform init for convolution weights.
template <typename T>
Tensor<T> conv_init(int kh, int kw, int ic, int oc, Rng& rng) {
  Tensor<T> w({kh, kw, ic, oc});
  double bound = 1.0 / std::sqrt(double(kh) * kw * ic);
  for (auto& v : w.v) v = T(rng.uniform(-bound, bound));
  return w;
}

// A conv layer's parameters, created once and applied to any input.
template <typename T>
struct ConvParams {
  int w = -1, b = -1;
  ConvSpec spec;
};

template <typename T>
ConvParams<T> make_conv(Graph<T>& g, const std::string& name, int k, int stride, int pad,
                        int ic, int oc, Rng& rng, std::vector<int>& params) {
  ConvParams<T> c;
  c.spec = {k, k, stride, pad};
  c.w = g.parameter(name + ".w", conv_init<T>(k, k, ic, oc, rng));
  c.b = g.parameter(name + ".b", Tensor<T>::zeros({1, 1, 1, oc}));
  params.push_back(c.w);
  params.push_back(c.b);
  return c;
}

template <typename T>
int apply_conv(Graph<T>& g, const ConvParams<T>& c, int x, const std::string& name = "") {
  return g.bias_add(g.conv2d(x, c.w, c.spec, name), c.b);
}

template <typename T>
struct BatchNormParams {
  int gamma = -1, beta = -1;
  std::pair<int, int> state{-1, -1};  // running mean / variance, shared by every application
  std::string name;
};

template <typename T>
BatchNormParams<T> make_bn(Graph<T>& g, const std::string& name, int channels,
                           std::vector<int>& params) {
  BatchNormParams<T> bn;
  bn.name = name;
  bn.gamma = g.parameter(name + ".gamma", Tensor<T>::full({1, 1, 1, channels}, T(1)));
  bn.beta = g.parameter(name + ".beta", Tensor<T>::zeros({1, 1, 1, channels}));
  bn.state = g.new_bn_state(name, channels);
  params.push_back(bn.gamma);
  params.push_back(bn.beta);
  return bn;
}

// conv, BN, ReLU, conv, BN, elementwise sum with the block input
template <typename T>
struct ResBlockParams {
  ConvParams<T> c1, c2;
  BatchNormParams<T> bn1, bn2;
};

template <typename T>
ResBlockParams<T> make_res_block(Graph<T>& g, const std::string& name, int ch, Rng& rng,
                                 std::vector<int>& params) {
  ResBlockParams<T> r;
  r.c1 = make_conv(g, name + ".conv1", 3, 1, 1, ch, ch, rng, params);
  r.bn1 = make_bn(g, name + ".bn1", ch, params);
  r.c2 = make_conv(g, name + ".conv2", 3, 1, 1, ch, ch, rng, params);
  r.bn2 = make_bn(g, name + ".bn2", ch, params);
  return r;
}

template <typename T>
int apply_res_block(Graph<T>& g, const ResBlockParams<T>& r, int x) {
  int h = apply_conv(g, r.c1, x);
  h = g.batch_norm(h, r.bn1.gamma, r.bn1.beta, r.bn1.state, r.bn1.name);
  h = g.relu(h);
  h = apply_conv(g, r.c2, h);
  h = g.batch_norm(h, r.bn2.gamma, r.bn2.beta, r.bn2.state, r.bn2.name);
  return g.add(x, h);
}

// Encoder: 1 conv, 4 residual blocks, 2 convs; exactly one stage carries
// stride 3 so the latent is (H/3, W/3, 3L). The latent activation is an affine
// sigmoid onto (-1, 1), matching the quantizer range.
template <typename T>
struct EncoderNet {
  ConvParams<T> conv1;
  std::vector<ResBlockParams<T>> blocks;
  ConvParams<T> conv2, conv3;
  std::vector<int> params;
};

template <typename T>
EncoderNet<T> make_encoder(Graph<T>& g, int in_channels, const NetworkConfig& cfg, Rng& rng,
                           const std::string& prefix = "E") {
  if (cfg.first_kernel % 2 == 0 || cfg.first_kernel < 3)
    throw std::invalid_argument("encoder first_kernel must be odd and >= 3");
  if (cfg.stride_stage < 0 || cfg.stride_stage > 2)
    throw std::invalid_argument("encoder stride_stage must be 0, 1 or 2");
  EncoderNet<T> e;
  int ch = cfg.base_channels;
  // stride-3 stage uses k = 2*pad + 3 so H/3 is exact for H divisible by 3
  bool s0 = cfg.stride_stage == 0, s1 = cfg.stride_stage == 1, s2 = cfg.stride_stage == 2;
  int k1 = cfg.first_kernel;
  e.conv1 = make_conv(g, prefix + ".conv1", k1, s0 ? 3 : 1, s0 ? (k1 - 3) / 2 : (k1 - 1) / 2,
                      in_channels, ch, rng, e.params);
  for (int i = 0; i < cfg.residual_blocks; ++i)
    e.blocks.push_back(
        make_res_block(g, prefix + ".res" + std::to_string(i), ch, rng, e.params));
  e.conv2 = make_conv(g, prefix + ".conv2", 3, s1 ? 3 : 1, s1 ? 0 : 1, ch, ch, rng, e.params);
  e.conv3 = make_conv(g, prefix + ".conv3", 3, s2 ? 3 : 1, s2 ? 0 : 1, ch, in_channels, rng,
                      e.params);
  return e;
}

template <typename T>
int apply_encoder(Graph<T>& g, const EncoderNet<T>& e, int x) {
  Shape s = g.shape(x);
  if (s.h % 3 != 0 || s.w % 3 != 0)
    throw std::invalid_argument("encoder input dims " + s.str() +
                                " not divisible by 3; padding bug upstream");
  int h = g.relu(apply_conv(g, e.conv1, x, "E.conv1"));
  for (const auto& blk : e.blocks) h = apply_res_block(g, blk, h);
  h = g.relu(apply_conv(g, e.conv2, h, "E.conv2"));
  h = apply_conv(g, e.conv3, h, "E.conv3");
  // affine sigmoid onto the quantizer range (-1, 1)
  return g.add_scalar(g.scale(g.sigmoid(h), 2.0), -1.0);
}

// Generator mirror: 2 convs, 4 residual blocks, one stride-3 transpose
// convolution, output conv + sigmoid.
template <typename T>
struct GeneratorNet {
  ConvParams<T> conv1, conv2;
  std::vector<ResBlockParams<T>> blocks;
  ConvParams<T> up;    // transpose conv
  ConvParams<T> out;
  std::vector<int> params;
};

template <typename T>
GeneratorNet<T> make_generator(Graph<T>& g, int out_channels, const NetworkConfig& cfg, Rng& rng,
                               const std::string& prefix = "G") {
  if (cfg.up_kernel < 3 || cfg.up_kernel % 2 == 0)
    throw std::invalid_argument("generator up_kernel must be odd and >= 3");
  GeneratorNet<T> n;
  int ch = cfg.base_channels;
  n.conv1 = make_conv(g, prefix + ".conv1", 3, 1, 1, out_channels, ch, rng, n.params);
  n.conv2 = make_conv(g, prefix + ".conv2", 3, 1, 1, ch, ch, rng, n.params);
  for (int i = 0; i < cfg.residual_blocks; ++i)
    n.blocks.push_back(
        make_res_block(g, prefix + ".res" + std::to_string(i), ch, rng, n.params));
  // stride-3 transpose conv with k = 2*pad + 3, the exact shape inverse
  n.up = make_conv(g, prefix + ".up", cfg.up_kernel, 3, (cfg.up_kernel - 3) / 2, ch, ch, rng,
                   n.params);
  n.out = make_conv(g, prefix + ".out", 3, 1, 1, ch, out_channels, rng, n.params);
  return n;
}

template <typename T>
int apply_generator(Graph<T>& g, const GeneratorNet<T>& n, int z) {
  int h = g.relu(apply_conv(g, n.conv1, z, "G.conv1"));
  h = g.relu(apply_conv(g, n.conv2, h, "G.conv2"));
  for (const auto& blk : n.blocks) h = apply_res_block(g, blk, h);
  h = g.relu(g.bias_add(g.transpose_conv2d(h, n.up.w, n.up.spec, "G.up"), n.up.b));
  h = apply_conv(g, n.out, h, "G.out");
  return g.sigmoid(h);
}

// Discriminator on (image, latent) pairs: 3 stride-2 convs with leaky relu on
// the image, the latent resized (nearest) to the image-branch resolution and
// concatenated on channels, a fusion conv, a 1x1 conv, global mean, sigmoid.
template <typename T>
struct DiscriminatorNet {
  ConvParams<T> c1, c2, c3, fuse, head;
  double slope = 0.2;
  std::vector<int> params;
};

template <typename T>
DiscriminatorNet<T> make_discriminator(Graph<T>& g, int img_channels, int latent_channels,
                                       const NetworkConfig& cfg, Rng& rng,
                                       const std::string& prefix = "D") {
  DiscriminatorNet<T> d;
  int ch = cfg.disc_channels;
  d.c1 = make_conv(g, prefix + ".conv1", 3, 2, 1, img_channels, ch, rng, d.params);
  d.c2 = make_conv(g, prefix + ".conv2", 3, 2, 1, ch, 2 * ch, rng, d.params);
  d.c3 = make_conv(g, prefix + ".conv3", 3, 2, 1, 2 * ch, 4 * ch, rng, d.params);
  d.fuse = make_conv(g, prefix + ".fuse", 3, 1, 1, 4 * ch + latent_channels, 4 * ch, rng,
                     d.params);
  d.head = make_conv(g, prefix + ".head", 1, 1, 0, 4 * ch, 1, rng, d.params);
  return d;
}

template <typename T>
int apply_discriminator(Graph<T>& g, const DiscriminatorNet<T>& d, int x, int z) {
  int h = g.leaky_relu(apply_conv(g, d.c1, x, "D.conv1"), d.slope);
  h = g.leaky_relu(apply_conv(g, d.c2, h, "D.conv2"), d.slope);
  h = g.leaky_relu(apply_conv(g, d.c3, h, "D.conv3"), d.slope);
  Shape hs = g.shape(h);
  int zr = g.resize_nearest(z, hs.h, hs.w);
  int cat = g.concat_channels(h, zr);
  int f = g.leaky_relu(apply_conv(g, d.fuse, cat, "D.fuse"), d.slope);
  int o = apply_conv(g, d.head, f, "D.head");
  return g.sigmoid(g.reduce_mean(o, ReduceAxes::spatial_channels()));
}

// Frozen random convolutional feature extractor standing in for a pretrained
// perceptual network. Identical seed, identical features; substitute weights
// by loading a checkpointed blob set if pretrained features are available.
template <typename T>
struct FeatureNet {
  std::vector<ConvParams<T>> convs;  // parameters are Const nodes
};

template <typename T>
FeatureNet<T> make_feature_net(Graph<T>& g, int in_channels, const FeatureNetConfig& cfg,
                               const std::string& prefix = "phi") {
  Rng rng(cfg.seed);
  FeatureNet<T> f;
  int ic = in_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    ConvParams<T> c;
    c.spec = {3, 3, 1, 1};
    c.w = g.constant(prefix + ".conv" + std::to_string(i) + ".w",
                     conv_init<T>(3, 3, ic, cfg.channels, rng));
    c.b = g.constant(prefix + ".conv" + std::to_string(i) + ".b",
                     Tensor<T>::zeros({1, 1, 1, cfg.channels}));
    f.convs.push_back(c);
    ic = cfg.channels;
  }
  return f;
}

template <typename T>
int apply_feature_net(Graph<T>& g, const FeatureNet<T>& f, int x) {
  int h = x;
  for (const auto& c : f.convs) h = g.relu(apply_conv(g, c, h, "phi.conv"));
  return h;
}

}  // namespace epicodec
