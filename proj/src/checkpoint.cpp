#include "epicodec/checkpoint.hpp"

#include "epicodec/common.hpp"

namespace epicodec {

static constexpr char kMagic[4] = {'E', 'P', 'C', 'K'};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u8(Checkpoint::kVersion);
  w.u64(ck.model_hash);
  w.u64(ck.seed);
  for (uint64_t s : ck.rng_state) w.u64(s);
  w.u32(ck.epoch);
  w.u64(ck.step);
  w.u32(uint32_t(ck.blobs.size()));
  for (const auto& b : ck.blobs) {
    w.str(b.name);
    w.u8(b.kind);
    w.u8(4);
    w.u32(uint32_t(b.shape.b));
    w.u32(uint32_t(b.shape.h));
    w.u32(uint32_t(b.shape.w));
    w.u32(uint32_t(b.shape.c));
    for (float f : b.data) w.f32(f);
  }
  w.u32(uint32_t(ck.adam_groups.size()));
  for (const auto& g : ck.adam_groups) {
    w.str(g.name);
    w.u64(uint64_t(g.step));
    w.u32(uint32_t(g.epoch));
    w.f64(g.base_lr);
    w.f64(g.decay_rate);
    w.f64(g.beta1);
    w.f64(g.beta2);
    w.f64(g.epsilon);
    w.u32(uint32_t(g.param_names.size()));
    for (size_t i = 0; i < g.param_names.size(); ++i) {
      w.str(g.param_names[i]);
      w.u32(uint32_t(g.m[i].size()));
      for (float f : g.m[i]) w.f32(f);
      for (float f : g.v[i]) w.f32(f);
    }
  }
  write_file(path, w.bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  uint8_t version = r.u8();
  if (version != Checkpoint::kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.model_hash = r.u64();
  ck.seed = r.u64();
  for (auto& s : ck.rng_state) s = r.u64();
  ck.epoch = r.u32();
  ck.step = r.u64();
  uint32_t n_blobs = r.u32();
  ck.blobs.resize(n_blobs);
  for (auto& b : ck.blobs) {
    b.name = r.str();
    b.kind = r.u8();
    uint8_t rank = r.u8();
    if (rank != 4) throw std::runtime_error("checkpoint: unexpected blob rank");
    b.shape.b = int(r.u32());
    b.shape.h = int(r.u32());
    b.shape.w = int(r.u32());
    b.shape.c = int(r.u32());
    b.data.resize(size_t(b.shape.numel()));
    for (auto& f : b.data) f = r.f32();
  }
  uint32_t n_groups = r.u32();
  ck.adam_groups.resize(n_groups);
  for (auto& g : ck.adam_groups) {
    g.name = r.str();
    g.step = int64_t(r.u64());
    g.epoch = int(r.u32());
    g.base_lr = r.f64();
    g.decay_rate = r.f64();
    g.beta1 = r.f64();
    g.beta2 = r.f64();
    g.epsilon = r.f64();
    uint32_t n_params = r.u32();
    g.param_names.resize(n_params);
    g.m.resize(n_params);
    g.v.resize(n_params);
    for (uint32_t i = 0; i < n_params; ++i) {
      g.param_names[i] = r.str();
      uint32_t count = r.u32();
      g.m[i].resize(count);
      for (auto& f : g.m[i]) f = r.f32();
      g.v[i].resize(count);
      for (auto& f : g.v[i]) f = r.f32();
    }
  }
  return ck;
}

Checkpoint snapshot_graph(Graph<float>& g,
                          const std::vector<std::pair<std::string, AdamState<float>*>>& groups,
                          const std::vector<std::vector<int>>& group_param_ids) {
  Checkpoint ck;
  for (int id : g.param_ids()) {
    CheckpointBlob b;
    b.name = g.name_of(id);
    b.kind = 0;
    b.shape = g.shape(id);
    const auto& t = g.param_value(id);
    b.data = t.v;
    ck.blobs.push_back(std::move(b));
  }
  for (size_t i = 0; i < g.n_states(); ++i) {
    CheckpointBlob b;
    b.name = g.state(i).name;
    b.kind = 1;
    b.shape = g.state(i).val.shape;
    b.data = g.state(i).val.v;
    ck.blobs.push_back(std::move(b));
  }
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& [name, st] = groups[gi];
    CheckpointAdamGroup cg;
    cg.name = name;
    cg.step = st->step;
    cg.epoch = st->epoch;
    cg.base_lr = st->base_lr;
    cg.decay_rate = st->decay_rate;
    cg.beta1 = st->beta1;
    cg.beta2 = st->beta2;
    cg.epsilon = st->epsilon;
    const auto& ids = group_param_ids[gi];
    for (size_t i = 0; i < ids.size(); ++i) {
      cg.param_names.push_back(g.name_of(ids[i]));
      if (st->m.empty()) {
        cg.m.emplace_back(size_t(g.shape(ids[i]).numel()), 0.0f);
        cg.v.emplace_back(size_t(g.shape(ids[i]).numel()), 0.0f);
      } else {
        cg.m.push_back(st->m[i].v);
        cg.v.push_back(st->v[i].v);
      }
    }
    ck.adam_groups.push_back(std::move(cg));
  }
  return ck;
}

void restore_graph(Graph<float>& g, const Checkpoint& ck,
                   const std::vector<std::pair<std::string, AdamState<float>*>>& groups,
                   const std::vector<std::vector<int>>& group_param_ids) {
  std::map<std::string, const CheckpointBlob*> by_name;
  for (const auto& b : ck.blobs) by_name[b.name] = &b;

  for (int id : g.param_ids()) {
    auto it = by_name.find(g.name_of(id));
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing parameter '" + g.name_of(id) + "'");
    auto& t = g.param_value(id);
    if (!(it->second->shape == t.shape))
      throw std::runtime_error("checkpoint: shape mismatch for '" + g.name_of(id) + "'");
    t.v = it->second->data;
    g.param_updated(id);
  }
  for (size_t i = 0; i < g.n_states(); ++i) {
    auto it = by_name.find(g.state(i).name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing state '" + g.state(i).name + "'");
    g.state(i).val.v = it->second->data;
    g.state_updated(i);
  }
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    auto& [name, st] = groups[gi];
    const CheckpointAdamGroup* cg = nullptr;
    for (const auto& c : ck.adam_groups)
      if (c.name == name) cg = &c;
    if (!cg) throw std::runtime_error("checkpoint: missing adam group '" + name + "'");
    st->step = cg->step;
    st->epoch = cg->epoch;
    st->base_lr = cg->base_lr;
    st->decay_rate = cg->decay_rate;
    st->beta1 = cg->beta1;
    st->beta2 = cg->beta2;
    st->epsilon = cg->epsilon;
    st->m.clear();
    st->v.clear();
    const auto& ids = group_param_ids[gi];
    if (cg->param_names.size() != ids.size())
      throw std::runtime_error("checkpoint: adam group '" + name + "' parameter count mismatch");
    for (size_t i = 0; i < ids.size(); ++i) {
      if (cg->param_names[i] != g.name_of(ids[i]))
        throw std::runtime_error("checkpoint: adam group '" + name + "' parameter order mismatch");
      Tensor<float> m(g.shape(ids[i])), v(g.shape(ids[i]));
      m.v = cg->m[i];
      v.v = cg->v[i];
      st->m.push_back(std::move(m));
      st->v.push_back(std::move(v));
    }
  }
}

}  // namespace epicodec
