#include "epicodec/config.hpp"

#include "epicodec/common.hpp"

namespace epicodec {

using nlohmann::json;

QuantizerSpec QuantizerConfig::to_spec() const {
  if (sigma > 0) {
    QuantizerSpec q;
    q.levels = T;
    q.lo = lo;
    q.hi = hi;
    q.sigma = sigma;
    q.window = W;
    q.validate();
    return q;
  }
  return QuantizerSpec::make(T, lo, hi, sigma_spacing_sq, W);
}

namespace {

// typed field reads that surface the failing dotted path
template <typename T>
T field(const json& j, const std::string& path, const std::string& key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path.empty() ? key : path + "." + key, e.what());
  }
}

json section(const json& j, const char* key) {
  if (!j.contains(key)) return json::object();
  if (!j.at(key).is_object()) throw ConfigError(key, "expected an object");
  return j.at(key);
}

}  // namespace

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;

  json d;
  d["kind"] = dataset.kind;
  if (!dataset.manifest.empty()) d["manifest"] = dataset.manifest;
  json syn;
  syn["K"] = dataset.synthetic.K;
  syn["M"] = dataset.synthetic.M;
  syn["N"] = dataset.synthetic.N;
  syn["frames"] = dataset.synthetic.frames;
  syn["fps"] = dataset.synthetic.fps;
  syn["background_seed"] = dataset.synthetic.background_seed;
  syn["background_disparity"] = dataset.synthetic.background_disparity;
  syn["background_cells"] = dataset.synthetic.background_cells;
  json layers = json::array();
  for (const auto& l : dataset.synthetic.layers)
    layers.push_back({{"x", l.x},
                      {"y", l.y},
                      {"w", l.w},
                      {"h", l.h},
                      {"disparity", l.disparity},
                      {"velocity", l.velocity},
                      {"r", l.r},
                      {"g", l.g},
                      {"b", l.b},
                      {"noise", l.noise},
                      {"seed", l.seed}});
  syn["layers"] = layers;
  d["synthetic"] = syn;
  j["dataset"] = d;

  j["epi"] = {{"L", epi.L}, {"strip_width", epi.strip_width}};
  j["quantizer"] = {{"T", quantizer.T},
                    {"lo", quantizer.lo},
                    {"hi", quantizer.hi},
                    {"W", quantizer.W},
                    {"sigma_spacing_sq", quantizer.sigma_spacing_sq},
                    {"sigma", quantizer.sigma}};
  j["networks"] = {{"base_channels", networks.base_channels},
                   {"disc_channels", networks.disc_channels},
                   {"residual_blocks", networks.residual_blocks},
                   {"stride_stage", networks.stride_stage},
                   {"first_kernel", networks.first_kernel},
                   {"up_kernel", networks.up_kernel},
                   {"bn_inference", networks.bn_inference},
                   {"feature_net",
                    {{"channels", networks.feature_net.channels},
                     {"depth", networks.feature_net.depth},
                     {"seed", networks.feature_net.seed}}}};
  j["train"] = {{"epochs", train.epochs},
                {"iterations", train.iterations},
                {"batchsize", train.batchsize},
                {"base_lr", train.base_lr},
                {"decay_rate", train.decay_rate},
                {"pretrain_steps", train.pretrain_steps},
                {"checkpoint_every", train.checkpoint_every},
                {"non_saturating", train.non_saturating},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"epsilon", train.epsilon},
                {"resume_from", train.resume_from}};
  j["loss"] = {{"alpha", loss.alpha},
               {"beta", loss.beta},
               {"use_feature_loss", loss.use_feature_loss}};
  json ops = json::array();
  for (const auto& op : evaluate.operating_points)
    ops.push_back({{"label", op.label}, {"overrides", op.overrides}});
  j["evaluate"] = {{"psnr_cap", evaluate.psnr_cap},
                   {"count_reference_bits", evaluate.count_reference_bits},
                   {"operating_points", ops}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  c.seed = field<uint64_t>(j, "", "seed", 1);

  json d = section(j, "dataset");
  c.dataset.kind = field<std::string>(d, "dataset", "kind", "synthetic");
  if (c.dataset.kind != "synthetic" && c.dataset.kind != "manifest")
    throw ConfigError("dataset.kind", "must be 'synthetic' or 'manifest'");
  c.dataset.manifest = field<std::string>(d, "dataset", "manifest", "");
  if (c.dataset.kind == "manifest" && c.dataset.manifest.empty())
    throw ConfigError("dataset.manifest", "required when dataset.kind is 'manifest'");
  json syn = section(d, "synthetic");
  auto& s = c.dataset.synthetic;
  s.K = field<int>(syn, "dataset.synthetic", "K", s.K);
  s.M = field<int>(syn, "dataset.synthetic", "M", s.M);
  s.N = field<int>(syn, "dataset.synthetic", "N", s.N);
  s.frames = field<int>(syn, "dataset.synthetic", "frames", s.frames);
  s.fps = field<double>(syn, "dataset.synthetic", "fps", s.fps);
  s.background_seed = field<uint64_t>(syn, "dataset.synthetic", "background_seed", s.background_seed);
  s.background_disparity =
      field<int>(syn, "dataset.synthetic", "background_disparity", s.background_disparity);
  s.background_cells = field<int>(syn, "dataset.synthetic", "background_cells", s.background_cells);
  if (syn.contains("layers")) {
    s.layers.clear();
    if (!syn.at("layers").is_array())
      throw ConfigError("dataset.synthetic.layers", "expected an array");
    size_t li = 0;
    for (const auto& lj : syn.at("layers")) {
      std::string path = "dataset.synthetic.layers[" + std::to_string(li++) + "]";
      SyntheticLayer l;
      l.x = field<int>(lj, path, "x", l.x);
      l.y = field<int>(lj, path, "y", l.y);
      l.w = field<int>(lj, path, "w", l.w);
      l.h = field<int>(lj, path, "h", l.h);
      l.disparity = field<int>(lj, path, "disparity", l.disparity);
      l.velocity = field<int>(lj, path, "velocity", l.velocity);
      l.r = field<int>(lj, path, "r", l.r);
      l.g = field<int>(lj, path, "g", l.g);
      l.b = field<int>(lj, path, "b", l.b);
      l.noise = field<double>(lj, path, "noise", l.noise);
      l.seed = field<uint64_t>(lj, path, "seed", l.seed);
      s.layers.push_back(l);
    }
  } else if (c.dataset.kind == "synthetic" && s.layers.empty()) {
    // default two-layer scene
    SyntheticLayer a;
    a.x = 10;
    a.y = 8;
    a.w = 24;
    a.h = 16;
    a.disparity = 2;
    a.velocity = 1;
    a.r = 200;
    a.g = 90;
    a.b = 60;
    a.seed = 11;
    SyntheticLayer b;
    b.x = 30;
    b.y = 26;
    b.w = 16;
    b.h = 12;
    b.disparity = 3;
    b.velocity = 0;
    b.r = 60;
    b.g = 120;
    b.b = 210;
    b.seed = 12;
    s.layers = {a, b};
  }

  json e = section(j, "epi");
  c.epi.L = field<int>(e, "epi", "L", 3);
  c.epi.strip_width = field<int>(e, "epi", "strip_width", 8);
  if (c.epi.L < 1) throw ConfigError("epi.L", "must be >= 1");
  if (c.epi.strip_width < 1) throw ConfigError("epi.strip_width", "must be >= 1");

  json q = section(j, "quantizer");
  c.quantizer.T = field<int>(q, "quantizer", "T", 90000);
  c.quantizer.lo = field<double>(q, "quantizer", "lo", -1.0);
  c.quantizer.hi = field<double>(q, "quantizer", "hi", 1.0);
  c.quantizer.W = field<int>(q, "quantizer", "W", 9);
  c.quantizer.sigma_spacing_sq = field<double>(q, "quantizer", "sigma_spacing_sq", 50.0);
  c.quantizer.sigma = field<double>(q, "quantizer", "sigma", 0.0);
  if (c.quantizer.T < 2) throw ConfigError("quantizer.T", "must be >= 2");
  if (!(c.quantizer.hi > c.quantizer.lo)) throw ConfigError("quantizer.hi", "must exceed lo");
  if (c.quantizer.W < 1 || c.quantizer.W % 2 == 0)
    throw ConfigError("quantizer.W", "must be a positive odd count");
  if (c.quantizer.sigma <= 0 && c.quantizer.sigma_spacing_sq <= 0)
    throw ConfigError("quantizer.sigma_spacing_sq", "must be positive when sigma is unset");

  json n = section(j, "networks");
  c.networks.base_channels = field<int>(n, "networks", "base_channels", 32);
  c.networks.disc_channels = field<int>(n, "networks", "disc_channels", 16);
  c.networks.residual_blocks = field<int>(n, "networks", "residual_blocks", 4);
  c.networks.stride_stage = field<int>(n, "networks", "stride_stage", 0);
  c.networks.first_kernel = field<int>(n, "networks", "first_kernel", 7);
  c.networks.up_kernel = field<int>(n, "networks", "up_kernel", 7);
  if (c.networks.up_kernel < 3 || c.networks.up_kernel % 2 == 0)
    throw ConfigError("networks.up_kernel", "must be odd and >= 3");
  c.networks.bn_inference = field<std::string>(n, "networks", "bn_inference", "per_sample");
  if (c.networks.bn_inference != "per_sample" && c.networks.bn_inference != "running")
    throw ConfigError("networks.bn_inference", "must be 'per_sample' or 'running'");
  if (c.networks.base_channels < 1) throw ConfigError("networks.base_channels", "must be >= 1");
  if (c.networks.stride_stage < 0 || c.networks.stride_stage > 2)
    throw ConfigError("networks.stride_stage", "must be 0, 1 or 2");
  if (c.networks.first_kernel < 3 || c.networks.first_kernel % 2 == 0)
    throw ConfigError("networks.first_kernel", "must be odd and >= 3");
  json fn = section(n, "feature_net");
  c.networks.feature_net.channels = field<int>(fn, "networks.feature_net", "channels", 16);
  c.networks.feature_net.depth = field<int>(fn, "networks.feature_net", "depth", 3);
  c.networks.feature_net.seed = field<uint64_t>(fn, "networks.feature_net", "seed", 9091);

  json t = section(j, "train");
  c.train.epochs = field<int>(t, "train", "epochs", 10);
  c.train.iterations = field<int>(t, "train", "iterations", 200);
  c.train.batchsize = field<int>(t, "train", "batchsize", 1);
  c.train.base_lr = field<double>(t, "train", "base_lr", 1e-4);
  c.train.decay_rate = field<double>(t, "train", "decay_rate", 0.95);
  c.train.pretrain_steps = field<int>(t, "train", "pretrain_steps", 500);
  c.train.checkpoint_every = field<int>(t, "train", "checkpoint_every", 0);
  c.train.non_saturating = field<bool>(t, "train", "non_saturating", false);
  c.train.beta1 = field<double>(t, "train", "beta1", 0.9);
  c.train.beta2 = field<double>(t, "train", "beta2", 0.999);
  c.train.epsilon = field<double>(t, "train", "epsilon", 1e-8);
  c.train.resume_from = field<std::string>(t, "train", "resume_from", "");
  if (c.train.epochs < 0) throw ConfigError("train.epochs", "must be >= 0");
  if (c.train.batchsize < 1) throw ConfigError("train.batchsize", "must be >= 1");
  if (c.train.iterations < 1) throw ConfigError("train.iterations", "must be >= 1");
  if (c.train.iterations % c.train.batchsize != 0)
    throw ConfigError("train.iterations", "must be divisible by train.batchsize");
  if (!(c.train.decay_rate > 0) || c.train.decay_rate > 1)
    throw ConfigError("train.decay_rate", "must lie in (0, 1]");
  if (!(c.train.base_lr > 0)) throw ConfigError("train.base_lr", "must be positive");

  json lo = section(j, "loss");
  c.loss.alpha = field<double>(lo, "loss", "alpha", 1.0);
  c.loss.beta = field<double>(lo, "loss", "beta", 1e-6);
  c.loss.use_feature_loss = field<bool>(lo, "loss", "use_feature_loss", true);
  if (c.loss.alpha < 0) throw ConfigError("loss.alpha", "must be >= 0");
  if (c.loss.beta < 0) throw ConfigError("loss.beta", "must be >= 0");

  json ev = section(j, "evaluate");
  c.evaluate.psnr_cap = field<double>(ev, "evaluate", "psnr_cap", 99.0);
  c.evaluate.count_reference_bits =
      field<bool>(ev, "evaluate", "count_reference_bits", false);
  if (ev.contains("operating_points")) {
    if (!ev.at("operating_points").is_array())
      throw ConfigError("evaluate.operating_points", "expected an array");
    size_t oi = 0;
    for (const auto& oj : ev.at("operating_points")) {
      std::string path = "evaluate.operating_points[" + std::to_string(oi++) + "]";
      OperatingPoint op;
      op.label = field<std::string>(oj, path, "label", "");
      if (op.label.empty()) throw ConfigError(path + ".label", "required");
      op.overrides = oj.contains("overrides") ? oj.at("overrides") : json::object();
      if (!op.overrides.is_object()) throw ConfigError(path + ".overrides", "expected an object");
      c.evaluate.operating_points.push_back(op);
    }
  } else {
    for (const char* b : {"3e-7", "1e-6", "3e-6", "1e-5"}) {
      OperatingPoint op;
      op.label = std::string("beta_") + b;
      op.overrides = json{{"loss.beta", std::stod(b)}};
      c.evaluate.operating_points.push_back(op);
    }
  }
  return c;
}

uint64_t ExperimentConfig::dataset_hash() const {
  json j = to_json();
  json sub{{"dataset", j["dataset"]}, {"epi", j["epi"]}};
  return fnv1a64(sub.dump());
}

uint64_t ExperimentConfig::model_hash() const {
  json j = to_json();
  json t = j["train"];
  t.erase("resume_from");       // resuming does not change the trained model identity
  t.erase("checkpoint_every");  // nor does snapshot cadence
  json sub{{"seed", j["seed"]},    {"dataset", j["dataset"]}, {"epi", j["epi"]},
           {"quantizer", j["quantizer"]}, {"networks", j["networks"]}, {"train", t},
           {"loss", j["loss"]}};
  return fnv1a64(sub.dump());
}

void apply_override(json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError(assignment, "override must look like path.to.field=value");
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // plain string
  }
  json* cur = &j;
  size_t pos = 0;
  for (;;) {
    size_t dot = path.find('.', pos);
    std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (key.empty()) throw ConfigError(path, "empty path segment");
    if (dot == std::string::npos) {
      (*cur)[key] = parsed;
      return;
    }
    cur = &(*cur)[key];
    if (!cur->is_object() && !cur->is_null())
      throw ConfigError(path.substr(0, dot), "cannot descend through a non-object");
    pos = dot + 1;
  }
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& set_overrides) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  for (const auto& ov : set_overrides) apply_override(j, ov);
  return ExperimentConfig::from_json(j);
}

}  // namespace epicodec
