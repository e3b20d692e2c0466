#include <json.hpp>

#include "epicodec/adam.hpp"
#include "epicodec/checkpoint.hpp"
#include "epicodec/common.hpp"
#include "epicodec/metrics.hpp"
#include "epicodec/training.hpp"

namespace epicodec {

namespace {

Tensor<float> stack_batch(const std::vector<EpiVolume>& dataset,
                          const std::vector<size_t>& picks, Shape batch_shape) {
  Tensor<float> x(batch_shape);
  size_t per = size_t(batch_shape.numel() / batch_shape.b);
  for (size_t s = 0; s < picks.size(); ++s)
    std::copy(dataset[picks[s]].data.v.begin(), dataset[picks[s]].data.v.end(),
              x.v.begin() + s * per);
  return x;
}

struct MetricsWriter {
  std::ofstream f;
  explicit MetricsWriter(const std::filesystem::path& path) : f(path, std::ios::binary) {
    if (!f) throw std::runtime_error("cannot open metrics file: " + path.string());
    f << "step,epoch,lr,d_loss,g_loss,e_loss,distortion,rate_nats\n";
  }
  void row(int64_t step, int epoch, double lr, float d, float g, float e, float dist,
           float rate) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.17g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(step), epoch, lr, double(d), double(g), double(e),
                  double(dist), double(rate));
    f << buf;
  }
};

}  // namespace

TrainSummary train_loop(const TrainerSetup& setup, const std::vector<EpiVolume>& dataset,
                        const std::filesystem::path& out_dir) {
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  const Shape vol_shape = dataset.front().data.shape;
  for (const auto& v : dataset)
    if (!(v.data.shape == vol_shape))
      throw std::invalid_argument("train: dataset shape inconsistency, " + v.data.shape.str() +
                                  " vs " + vol_shape.str() + "; rejected before step 1");
  const TrainConfig& tc = setup.train;
  if (tc.batchsize < 1) throw std::invalid_argument("train: batchsize must be >= 1");
  if (tc.iterations % tc.batchsize != 0)
    throw std::invalid_argument("train: iterations must be divisible by batchsize");

  std::filesystem::create_directories(out_dir);
  Shape batch_shape{tc.batchsize, vol_shape.h, vol_shape.w, vol_shape.c};

  Rng rng(setup.seed);
  auto tg = build_training_graph<float>(batch_shape, setup.networks, setup.quant, setup.loss,
                                        tc.non_saturating, rng);
  Graph<float>& g = tg->g;

  auto make_adam = [&] {
    AdamState<float> st;
    st.base_lr = tc.base_lr;
    st.decay_rate = tc.decay_rate;
    st.beta1 = tc.beta1;
    st.beta2 = tc.beta2;
    st.epsilon = tc.epsilon;
    return st;
  };
  AdamState<float> adam_d = make_adam(), adam_g = make_adam(), adam_e = make_adam();
  std::vector<std::pair<std::string, AdamState<float>*>> groups{
      {"D", &adam_d}, {"G", &adam_g}, {"E", &adam_e}};
  std::vector<std::vector<int>> group_ids{tg->d_params, tg->g_params, tg->e_params};

  const int steps_per_epoch = tc.iterations / tc.batchsize;
  const int64_t total_steps = int64_t(tc.epochs) * steps_per_epoch;
  int64_t start_step = 0;

  if (!tc.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(tc.resume_from);
    if (ck.model_hash != setup.model_hash)
      throw HashMismatchError("checkpoint " + tc.resume_from +
                              " was trained under a different configuration (hash " +
                              hex64(ck.model_hash) + " != " + hex64(setup.model_hash) + ")");
    restore_graph(g, ck, groups, group_ids);
    rng.set_state(ck.rng_state);
    start_step = int64_t(ck.step);
  }

  auto save = [&](const std::filesystem::path& path, int64_t step, int epoch) {
    Checkpoint ck = snapshot_graph(g, groups, group_ids);
    ck.model_hash = setup.model_hash;
    ck.seed = setup.seed;
    ck.rng_state = rng.state();
    ck.step = uint64_t(step);
    ck.epoch = uint32_t(epoch);
    save_checkpoint(path, ck);
    return path;
  };

  auto apply_adam = [&](AdamState<float>& st, const std::vector<int>& ids) {
    std::vector<Tensor<float>*> params;
    std::vector<const Tensor<float>*> grads;
    std::vector<std::string> names;
    for (int id : ids) {
      params.push_back(&g.param_value(id));
      grads.push_back(&g.grad_ref(id));
      names.push_back(g.name_of(id));
    }
    adam_step<float>(params, grads, names, st);
    for (int id : ids) g.param_updated(id);
  };

  TrainSummary summary;
  summary.metrics_path = out_dir / "metrics.csv";
  MetricsWriter metrics(summary.metrics_path);
  std::filesystem::path last_ck;

  auto check_finite = [&](float v, const char* what, int64_t step) {
    if (!std::isfinite(double(v)))
      throw TrainAborted(std::string("non-finite ") + what + " at step " + std::to_string(step) +
                         (last_ck.empty() ? std::string("; no checkpoint written yet")
                                          : "; last good checkpoint: " + last_ck.string()));
  };

  g.set_training(true);
  for (int64_t step = start_step; step < total_steps; ++step) {
    int epoch = int(step / steps_per_epoch);
    adam_d.epoch = adam_g.epoch = adam_e.epoch = epoch;  // lr = base * decay^epoch
    double lr = adam_e.effective_lr();

    if (tc.checkpoint_every > 0 && step > start_step && step % tc.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_step_%06lld.epck",
                    static_cast<long long>(step));
      last_ck = save(out_dir / name, step, epoch);
    }

    std::vector<size_t> picks(size_t(tc.batchsize));
    for (auto& p : picks) p = size_t(rng.uniform_int(dataset.size()));
    g.set_input(tg->x, stack_batch(dataset, picks, batch_shape));

    float d_loss, g_loss, e_loss, dist, rate;
    try {
      if (step < tc.pretrain_steps) {
        // warmup: E and G jointly descend the quantizer-bypass distortion
        g.forward({tg->distortion_pre, tg->d_loss, tg->g_loss, tg->e_loss, tg->distortion,
                   tg->rate});
        d_loss = g.value(tg->d_loss).v[0];
        g_loss = g.value(tg->g_loss).v[0];
        e_loss = g.value(tg->e_loss).v[0];
        dist = g.value(tg->distortion).v[0];
        rate = g.value(tg->rate).v[0];
        std::vector<int> ge = tg->g_params;
        ge.insert(ge.end(), tg->e_params.begin(), tg->e_params.end());
        g.backward(tg->distortion_pre, ge);
        apply_adam(adam_g, tg->g_params);
        apply_adam(adam_e, tg->e_params);
      } else {
        // Algorithm order: D ascends, then G descends, then E descends
        g.forward({tg->d_loss});
        d_loss = g.value(tg->d_loss).v[0];
        g.backward(tg->d_loss, tg->d_params);
        apply_adam(adam_d, tg->d_params);

        g.forward({tg->g_loss});
        g_loss = g.value(tg->g_loss).v[0];
        g.backward(tg->g_loss, tg->g_params);
        apply_adam(adam_g, tg->g_params);

        g.forward({tg->e_loss, tg->distortion, tg->rate});
        e_loss = g.value(tg->e_loss).v[0];
        dist = g.value(tg->distortion).v[0];
        rate = g.value(tg->rate).v[0];
        g.backward(tg->e_loss, tg->e_params);
        apply_adam(adam_e, tg->e_params);
      }
    } catch (const TrainAborted& e) {
      throw TrainAborted(std::string(e.what()) +
                         (last_ck.empty() ? "" : "; last good checkpoint: " + last_ck.string()));
    }

    check_finite(d_loss, "d_loss", step);
    check_finite(g_loss, "g_loss", step);
    check_finite(e_loss, "e_loss", step);
    metrics.row(step, epoch, lr, d_loss, g_loss, e_loss, dist, rate);
    if (step == 0) summary.step0_distortion = double(dist);
    summary.final_distortion = double(dist);
  }
  summary.steps = total_steps;

  int final_epoch = tc.epochs > 0 ? tc.epochs - 1 : 0;
  summary.checkpoint_path = save(out_dir / "checkpoint.epck", total_steps, final_epoch);

  // deployed-path reconstruction quality through the hard quantizer,
  // averaged over per-EPI PSNR on the unpadded region
  g.set_mode(setup.networks.bn_inference == "running" ? Graph<float>::BnMode::EvalRunning
                                                      : Graph<float>::BnMode::EvalPerSample);
  double psnr_sum = 0;
  for (const auto& vol : dataset) {
    std::vector<size_t> picks(size_t(tc.batchsize), size_t(&vol - dataset.data()));
    g.set_input(tg->x, stack_batch(dataset, picks, batch_shape));
    g.forward({tg->z});
    Tensor<float> z = g.value(tg->z);
    g.set_input(tg->z_in, dequantize<float>(hard_quantize(z, setup.quant), setup.quant));
    g.forward({tg->xhat_dec});
    const Tensor<float>& rec = g.value(tg->xhat_dec);
    psnr_sum += epi_psnr_db(vol, rec);
  }
  summary.final_psnr_db = psnr_sum / double(dataset.size());
  g.set_training(true);

  nlohmann::json js;
  js["format_version"] = 1;
  js["model_hash"] = hex64(setup.model_hash);
  js["seed"] = setup.seed;
  js["steps"] = summary.steps;
  js["step0_distortion"] = summary.step0_distortion;
  js["final_distortion"] = summary.final_distortion;
  js["final_psnr_db"] = summary.final_psnr_db;
  write_text_file(out_dir / "summary.json", js.dump(2) + "\n");
  return summary;
}

}  // namespace epicodec
