#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "epicodec/adam.hpp"
#include "epicodec/checkpoint.hpp"
#include "epicodec/common.hpp"
#include "epicodec/networks.hpp"
#include "testutil.hpp"

using namespace epicodec;
using test::random_tensor;

TEST_CASE("adam: zero gradient from a fresh state leaves parameters unchanged") {
  Tensor<double> p({1, 1, 4, 1});
  p.v = {1.0, -2.0, 0.5, 3.0};
  Tensor<double> g = Tensor<double>::zeros({1, 1, 4, 1});
  AdamState<double> st;
  std::vector<Tensor<double>*> params{&p};
  std::vector<const Tensor<double>*> grads{&g};
  std::vector<std::string> names{"p"};
  auto before = p.v;
  adam_step<double>(params, grads, names, st);
  CHECK(p.v == before);
  CHECK(st.step == 1);
}

TEST_CASE("adam: hand-evaluated first step on a scalar parameter") {
  // m=0.1, v=0.001, corrections 0.1/0.001 -> update = -lr * 1/(1 + eps)
  Tensor<double> p({1, 1, 1, 1});
  p.v = {0.25};
  Tensor<double> g({1, 1, 1, 1});
  g.v = {1.0};
  AdamState<double> st;
  st.base_lr = 1e-3;
  st.decay_rate = 1.0;
  std::vector<Tensor<double>*> params{&p};
  std::vector<const Tensor<double>*> grads{&g};
  std::vector<std::string> names{"p"};
  adam_step<double>(params, grads, names, st);
  double expect = 0.25 - 1e-3 * (1.0 / (1.0 + 1e-8));
  CHECK(p.v[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adam: exponential decay gives base_lr * 0.81 at epoch 2") {
  AdamState<double> st;
  st.base_lr = 2e-3;
  st.decay_rate = 0.9;
  st.epoch = 2;
  CHECK(st.effective_lr() == doctest::Approx(2e-3 * 0.81).epsilon(1e-15));
  CHECK(st.effective_lr() > 0);
}

TEST_CASE("adam: non-finite gradient aborts naming the parameter") {
  Tensor<double> p({1, 1, 2, 1});
  Tensor<double> g({1, 1, 2, 1});
  g.v = {1.0, std::numeric_limits<double>::infinity()};
  AdamState<double> st;
  std::vector<Tensor<double>*> params{&p};
  std::vector<const Tensor<double>*> grads{&g};
  std::vector<std::string> names{"E.conv1.w"};
  CHECK_THROWS_WITH_AS((adam_step<double>(params, grads, names, st)),
                       doctest::Contains("E.conv1.w"), TrainAborted);
}

TEST_CASE("adam: gradient shape mismatch rejected") {
  Tensor<double> p({1, 1, 2, 1});
  Tensor<double> g({1, 1, 3, 1});
  AdamState<double> st;
  std::vector<Tensor<double>*> params{&p};
  std::vector<const Tensor<double>*> grads{&g};
  std::vector<std::string> names{"p"};
  CHECK_THROWS_AS((adam_step<double>(params, grads, names, st)), std::invalid_argument);
}

namespace {

struct SmallNet {
  Graph<float> g;
  int x, loss;
  std::vector<int> params;
};

std::unique_ptr<SmallNet> small_net(uint64_t seed) {
  auto net = std::make_unique<SmallNet>();
  Rng rng(seed);
  net->x = net->g.input("x", {1, 6, 6, 2});
  auto conv = make_conv(net->g, "net.conv", 3, 1, 1, 2, 4, rng, net->params);
  auto bn = make_bn(net->g, "net.bn", 4, net->params);
  int h = net->g.relu(
      net->g.batch_norm(apply_conv(net->g, conv, net->x), bn.gamma, bn.beta, bn.state, bn.name));
  net->loss = net->g.reduce_mean(net->g.mul(h, h), ReduceAxes::all());
  return net;
}

}  // namespace

TEST_CASE("checkpoint: save/load round trip restores parameters, states and adam exactly") {
  test::TempDir dir("ck");
  auto net = small_net(7);
  Rng rng(9);
  auto xv = random_tensor({1, 6, 6, 2}, rng).cast<float>();

  AdamState<float> adam;
  adam.base_lr = 1e-3;
  std::vector<std::pair<std::string, AdamState<float>*>> groups{{"net", &adam}};
  std::vector<std::vector<int>> ids{net->params};

  // a few steps so moments and running stats are non-trivial
  for (int i = 0; i < 3; ++i) {
    net->g.set_input(net->x, xv);
    net->g.forward({net->loss});
    net->g.backward(net->loss, net->params);
    std::vector<Tensor<float>*> params;
    std::vector<const Tensor<float>*> grads;
    std::vector<std::string> names;
    for (int id : net->params) {
      params.push_back(&net->g.param_value(id));
      grads.push_back(&net->g.grad_ref(id));
      names.push_back(net->g.name_of(id));
    }
    adam_step<float>(params, grads, names, adam);
    for (int id : net->params) net->g.param_updated(id);
  }

  Checkpoint ck = snapshot_graph(net->g, groups, ids);
  ck.model_hash = 0xDEAD;
  ck.seed = 77;
  ck.rng_state = rng.state();
  ck.epoch = 2;
  ck.step = 3;
  save_checkpoint(dir.path / "a.epck", ck);

  Checkpoint back = load_checkpoint(dir.path / "a.epck");
  CHECK(back.model_hash == 0xDEAD);
  CHECK(back.seed == 77);
  CHECK(back.rng_state == rng.state());
  CHECK(back.epoch == 2);
  CHECK(back.step == 3);

  // restoring into a fresh graph reproduces the forward pass bit-exactly
  auto net2 = small_net(12345);  // different init, fully overwritten
  AdamState<float> adam2;
  std::vector<std::pair<std::string, AdamState<float>*>> groups2{{"net", &adam2}};
  std::vector<std::vector<int>> ids2{net2->params};
  restore_graph(net2->g, back, groups2, ids2);
  CHECK(adam2.step == adam.step);
  CHECK(adam2.m.size() == adam.m.size());
  for (size_t i = 0; i < adam.m.size(); ++i) {
    CHECK(adam2.m[i].v == adam.m[i].v);
    CHECK(adam2.v[i].v == adam.v[i].v);
  }

  // resaving straight after restore reproduces the file byte for byte
  Checkpoint ck2 = snapshot_graph(net2->g, groups2, ids2);
  ck2.model_hash = back.model_hash;
  ck2.seed = back.seed;
  ck2.rng_state = back.rng_state;
  ck2.epoch = back.epoch;
  ck2.step = back.step;
  save_checkpoint(dir.path / "b.epck", ck2);
  CHECK(read_file(dir.path / "a.epck") == read_file(dir.path / "b.epck"));

  net->g.set_input(net->x, xv);
  net->g.forward({net->loss});
  net2->g.set_input(net2->x, xv);
  net2->g.forward({net2->loss});
  CHECK(net->g.value(net->loss).v[0] == net2->g.value(net2->loss).v[0]);

  // inference mode uses the restored running statistics
  net->g.set_training(false);
  net2->g.set_training(false);
  net->g.forward({net->loss});
  net2->g.forward({net2->loss});
  CHECK(net->g.value(net->loss).v[0] == net2->g.value(net2->loss).v[0]);
}

TEST_CASE("checkpoint: corrupt magic rejected; missing parameter rejected") {
  test::TempDir dir("ck_bad");
  auto net = small_net(3);
  AdamState<float> adam;
  std::vector<std::pair<std::string, AdamState<float>*>> groups{{"net", &adam}};
  std::vector<std::vector<int>> ids{net->params};
  Checkpoint ck = snapshot_graph(net->g, groups, ids);
  save_checkpoint(dir.path / "a.epck", ck);

  auto bytes = read_file(dir.path / "a.epck");
  bytes[0] ^= 0x55;
  write_file(dir.path / "bad.epck", bytes);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir.path / "bad.epck"), doctest::Contains("magic"),
                       std::runtime_error);

  ck.blobs.erase(ck.blobs.begin());
  save_checkpoint(dir.path / "missing.epck", ck);
  Checkpoint partial = load_checkpoint(dir.path / "missing.epck");
  CHECK_THROWS_WITH_AS(restore_graph(net->g, partial, groups, ids),
                       doctest::Contains("missing parameter"), std::runtime_error);
}
