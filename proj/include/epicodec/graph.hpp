#pragma once

#include <cassert>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "epicodec/quantizer.hpp"
#include "epicodec/tensor.hpp"

namespace epicodec {

enum class Op {
  Input, Param, Const,
  Conv2d, TConv2d, BatchNorm,
  Relu, LeakyRelu, Sigmoid, LogFloor, Exp, Scale, AddScalar,
  Add, Sub, Mul, BiasAdd,
  ReduceMean, ReduceSum, ConcatChannels, PadSpatial, CropSpatial, ResizeNearest,
  SoftQuant, RateEntropy,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::Const: return "const";
    case Op::Conv2d: return "conv2d";
    case Op::TConv2d: return "transpose_conv2d";
    case Op::BatchNorm: return "batch_norm";
    case Op::Relu: return "relu";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::LogFloor: return "log";
    case Op::Exp: return "exp";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Add: return "elementwise_add";
    case Op::Sub: return "elementwise_sub";
    case Op::Mul: return "elementwise_mul";
    case Op::BiasAdd: return "bias_add";
    case Op::ReduceMean: return "reduce_mean";
    case Op::ReduceSum: return "reduce_sum";
    case Op::ConcatChannels: return "concat_channels";
    case Op::PadSpatial: return "pad_spatial";
    case Op::CropSpatial: return "crop_spatial";
    case Op::ResizeNearest: return "resize_nearest";
    case Op::SoftQuant: return "soft_quantize";
    case Op::RateEntropy: return "rate_entropy";
  }
  return "?";
}

struct ConvSpec {
  int kh = 3, kw = 3, stride = 1, pad = 0;
};

struct ReduceAxes {
  bool b = false, h = false, w = false, c = false;
  static ReduceAxes all() { return {true, true, true, true}; }
  static ReduceAxes spatial_channels() { return {false, true, true, true}; }
};

struct Box {
  int top = 0, bottom = 0, left = 0, right = 0;
};

// Reverse-mode graph over rank-4 tensors. Nodes are appended in topological
// order; values are recomputed incrementally (a node reruns only when an
// ancestor leaf changed since it was last evaluated). backward() can be scoped
// to a parameter subset, in which case gradient work outside the paths from
// the loss to those parameters is skipped.
template <typename T>
class Graph {
 public:
  struct Node {
    Op op;
    std::string name;
    Shape shape;
    int in[3] = {-1, -1, -1};
    int n_in = 0;

    ConvSpec conv;
    ReduceAxes axes;
    Box box;
    int out_h = 0, out_w = 0;  // resize target
    double k0 = 0;             // scale factor / added constant / slope / log floor
    double k1 = 0;             // batch-norm momentum
    double k2 = 0;             // batch-norm epsilon
    QuantizerSpec qspec;
    int state_mean = -1, state_var = -1;  // batch-norm running stats

    Tensor<T> val;
    Tensor<T> grad;
    uint64_t out_version = 0;
    uint64_t last_in[3] = {0, 0, 0};
    uint64_t last_mode = 0;
    uint64_t last_state = 0;
    uint64_t grad_pass = 0;
    bool ever_computed = false;

    // per-forward scratch kept for backward
    std::vector<double> aux;       // BN: mean+inv_std; SoftQuant: derivs
    std::vector<double> aux2;      // RateEntropy: flattened window weights
    std::vector<int32_t> aux_win;  // RateEntropy: window starts
    bool train_mode_used = false;
  };

  struct StateTensor {
    std::string name;
    Tensor<T> val;
    uint64_t version = 1;
  };

  // --- construction ---------------------------------------------------------

  int input(const std::string& name, Shape s) {
    Node n = make_node(Op::Input, name, s);
    n.out_version = 0;  // unbound until set_input
    return push(std::move(n));
  }

  int parameter(const std::string& name, Tensor<T> init) {
    Node n = make_node(Op::Param, name, init.shape);
    n.val = std::move(init);
    n.out_version = next_version();
    int id = push(std::move(n));
    param_ids_.push_back(id);
    param_index_[nodes_[size_t(id)].name] = id;
    return id;
  }

  int constant(const std::string& name, Tensor<T> value) {
    Node n = make_node(Op::Const, name, value.shape);
    n.val = std::move(value);
    n.out_version = next_version();
    return push(std::move(n));
  }

  int conv2d(int x, int w, ConvSpec cs, const std::string& name = "") {
    const Shape xs = shape_of(x, "conv2d input");
    const Shape ws = shape_of(w, "conv2d weight");
    if (cs.stride < 1) fail(name, "conv2d stride must be >= 1");
    if (ws.b != cs.kh || ws.h != cs.kw)
      fail(name, "conv2d weight dims " + ws.str() + " disagree with kernel " +
                     std::to_string(cs.kh) + "x" + std::to_string(cs.kw));
    if (ws.w != xs.c)
      fail(name, "conv2d input channels " + std::to_string(xs.c) +
                     " != weight in_channels " + std::to_string(ws.w));
    int ph = xs.h + 2 * cs.pad, pw = xs.w + 2 * cs.pad;
    if (cs.kh > ph || cs.kw > pw || cs.stride > ph || cs.stride > pw)
      fail(name, "conv2d kernel/stride exceed padded input " + xs.str());
    Shape os{xs.b, (ph - cs.kh) / cs.stride + 1, (pw - cs.kw) / cs.stride + 1, ws.c};
    Node n = make_node(Op::Conv2d, name, os);
    n.conv = cs;
    set_inputs(n, {x, w});
    return push(std::move(n));
  }

  int transpose_conv2d(int x, int w, ConvSpec cs, const std::string& name = "") {
    const Shape xs = shape_of(x, "transpose_conv2d input");
    const Shape ws = shape_of(w, "transpose_conv2d weight");
    if (cs.stride < 1) fail(name, "transpose_conv2d stride must be >= 1");
    if (ws.b != cs.kh || ws.h != cs.kw) fail(name, "transpose_conv2d weight dims mismatch");
    if (ws.w != xs.c) fail(name, "transpose_conv2d channel mismatch");
    int oh = (xs.h - 1) * cs.stride + cs.kh - 2 * cs.pad;
    int ow = (xs.w - 1) * cs.stride + cs.kw - 2 * cs.pad;
    if (oh < 1 || ow < 1) fail(name, "transpose_conv2d output would be empty");
    Node n = make_node(Op::TConv2d, name, Shape{xs.b, oh, ow, ws.c});
    n.conv = cs;
    set_inputs(n, {x, w});
    return push(std::move(n));
  }

  // Running statistics belong to the layer: create them once with
  // new_bn_state and pass them to every application of the layer body.
  std::pair<int, int> new_bn_state(const std::string& name, int channels) {
    Shape want{1, 1, 1, channels};
    int mean = add_state(name + ".running_mean", Tensor<T>::zeros(want));
    int var = add_state(name + ".running_var", Tensor<T>::full(want, T(1)));
    return {mean, var};
  }

  int batch_norm(int x, int gamma, int beta, std::pair<int, int> state,
                 const std::string& name, double momentum = 0.9, double eps = 1e-5) {
    const Shape xs = shape_of(x, "batch_norm input");
    const Shape gs = shape_of(gamma, "batch_norm gamma");
    const Shape bs = shape_of(beta, "batch_norm beta");
    Shape want{1, 1, 1, xs.c};
    if (!(gs == want) || !(bs == want))
      fail(name, "batch_norm affine shapes must be " + want.str());
    if (state.first < 0 || size_t(state.first) >= states_.size() || state.second < 0 ||
        size_t(state.second) >= states_.size() ||
        !(states_[size_t(state.first)].val.shape == want))
      fail(name, "batch_norm running-stat state mismatch");
    Node n = make_node(Op::BatchNorm, name, xs);
    n.k1 = momentum;
    n.k2 = eps;
    set_inputs(n, {x, gamma, beta});
    n.state_mean = state.first;
    n.state_var = state.second;
    return push(std::move(n));
  }

  int batch_norm(int x, int gamma, int beta, const std::string& name,
                 double momentum = 0.9, double eps = 1e-5) {
    return batch_norm(x, gamma, beta, new_bn_state(name, shape_of(x, "bn").c), name, momentum,
                      eps);
  }

  int relu(int x) { return unary(Op::Relu, x); }
  int leaky_relu(int x, double slope) {
    int id = unary(Op::LeakyRelu, x);
    nodes_[size_t(id)].k0 = slope;
    return id;
  }
  int sigmoid(int x) { return unary(Op::Sigmoid, x); }
  int log_floor(int x, double floor) {
    int id = unary(Op::LogFloor, x);
    nodes_[size_t(id)].k0 = floor;
    return id;
  }
  int exp(int x) { return unary(Op::Exp, x); }
  int scale(int x, double k) {
    int id = unary(Op::Scale, x);
    nodes_[size_t(id)].k0 = k;
    return id;
  }
  int add_scalar(int x, double k) {
    int id = unary(Op::AddScalar, x);
    nodes_[size_t(id)].k0 = k;
    return id;
  }

  int add(int a, int b) { return binary(Op::Add, a, b); }
  int sub(int a, int b) { return binary(Op::Sub, a, b); }
  int mul(int a, int b) { return binary(Op::Mul, a, b); }

  int bias_add(int x, int bias, const std::string& name = "") {
    const Shape xs = shape_of(x, "bias_add input");
    const Shape bs = shape_of(bias, "bias_add bias");
    if (!(bs == Shape{1, 1, 1, xs.c}))
      fail(name, "bias_add bias shape " + bs.str() + " incompatible with " + xs.str());
    Node n = make_node(Op::BiasAdd, name, xs);
    set_inputs(n, {x, bias});
    return push(std::move(n));
  }

  int reduce_mean(int x, ReduceAxes a) { return reduce(Op::ReduceMean, x, a); }
  int reduce_sum(int x, ReduceAxes a) { return reduce(Op::ReduceSum, x, a); }

  int concat_channels(int a, int b, const std::string& name = "") {
    const Shape as = shape_of(a, "concat lhs");
    const Shape bs = shape_of(b, "concat rhs");
    if (as.b != bs.b || as.h != bs.h || as.w != bs.w)
      fail(name, "concat_channels spatial/batch mismatch " + as.str() + " vs " + bs.str());
    Node n = make_node(Op::ConcatChannels, name, Shape{as.b, as.h, as.w, as.c + bs.c});
    set_inputs(n, {a, b});
    return push(std::move(n));
  }

  int pad_spatial(int x, Box box, const std::string& name = "") {
    const Shape xs = shape_of(x, "pad input");
    if (box.top < 0 || box.bottom < 0 || box.left < 0 || box.right < 0)
      fail(name, "pad_spatial amounts must be non-negative");
    Node n = make_node(Op::PadSpatial, name,
                       Shape{xs.b, xs.h + box.top + box.bottom, xs.w + box.left + box.right, xs.c});
    n.box = box;
    set_inputs(n, {x});
    return push(std::move(n));
  }

  int crop_spatial(int x, Box box, const std::string& name = "") {
    const Shape xs = shape_of(x, "crop input");
    int oh = xs.h - box.top - box.bottom, ow = xs.w - box.left - box.right;
    if (box.top < 0 || box.bottom < 0 || box.left < 0 || box.right < 0 || oh < 1 || ow < 1)
      fail(name, "crop_spatial box exceeds input " + xs.str());
    Node n = make_node(Op::CropSpatial, name, Shape{xs.b, oh, ow, xs.c});
    n.box = box;
    set_inputs(n, {x});
    return push(std::move(n));
  }

  int resize_nearest(int x, int out_h, int out_w, const std::string& name = "") {
    const Shape xs = shape_of(x, "resize input");
    if (out_h < 1 || out_w < 1) fail(name, "resize_nearest target must be positive");
    Node n = make_node(Op::ResizeNearest, name, Shape{xs.b, out_h, out_w, xs.c});
    n.out_h = out_h;
    n.out_w = out_w;
    set_inputs(n, {x});
    return push(std::move(n));
  }

  int soft_quantize(int x, const QuantizerSpec& q, const std::string& name = "") {
    q.validate();
    Node n = make_node(Op::SoftQuant, name, shape_of(x, "soft_quantize input"));
    n.qspec = q;
    set_inputs(n, {x});
    return push(std::move(n));
  }

  int rate_entropy(int x, const QuantizerSpec& q, const std::string& name = "") {
    q.validate();
    Node n = make_node(Op::RateEntropy, name, Shape{1, 1, 1, 1});
    n.qspec = q;
    set_inputs(n, {x});
    return push(std::move(n));
  }

  // --- execution -------------------------------------------------------------

  void set_input(int id, const Tensor<T>& t) {
    Node& n = node_mut(id);
    if (n.op != Op::Input) throw std::invalid_argument("set_input: node is not an input");
    if (!(t.shape == n.shape))
      throw std::invalid_argument("set_input '" + n.name + "': shape " + t.shape.str() +
                                  " != declared " + n.shape.str());
    n.val = t;
    n.out_version = next_version();
  }

  // Batch-norm execution mode. Training normalizes by batch statistics and
  // updates the running accumulators; EvalRunning normalizes by the running
  // statistics; EvalPerSample normalizes by the current batch statistics
  // without touching the accumulators (the deployed-codec default, since a
  // batchsize-1 network only ever saw per-sample normalization).
  enum class BnMode { Train, EvalRunning, EvalPerSample };

  void set_mode(BnMode m) {
    if (m != mode_) {
      mode_ = m;
      mode_version_ = next_version();
    }
  }
  BnMode mode() const { return mode_; }
  void set_training(bool training) { set_mode(training ? BnMode::Train : BnMode::EvalRunning); }
  bool training() const { return mode_ == BnMode::Train; }

  // Recomputes stale ancestors of the requested nodes.
  void forward(const std::vector<int>& outputs) {
    std::vector<uint8_t> needed(nodes_.size(), 0);
    for (int id : outputs) {
      check_id(id);
      needed[size_t(id)] = 1;
    }
    for (int id = int(nodes_.size()) - 1; id >= 0; --id) {
      if (!needed[size_t(id)]) continue;
      const Node& n = nodes_[size_t(id)];
      for (int k = 0; k < n.n_in; ++k) needed[size_t(n.in[k])] = 1;
    }
    for (size_t id = 0; id < nodes_.size(); ++id) {
      if (!needed[id]) continue;
      Node& n = nodes_[id];
      if (n.op == Op::Input && n.out_version == 0)
        throw std::invalid_argument("forward: input '" + n.name + "' not bound");
      if (n.n_in == 0) continue;
      bool stale = !n.ever_computed;
      for (int k = 0; k < n.n_in && !stale; ++k)
        stale = nodes_[size_t(n.in[k])].out_version != n.last_in[k];
      if (n.op == Op::BatchNorm) {
        if (n.last_mode != mode_version_) stale = true;
        if (mode_ == BnMode::EvalRunning &&
            n.last_state != states_[size_t(n.state_mean)].version)
          stale = true;
      }
      if (!stale) continue;
      compute(n);
      for (int k = 0; k < n.n_in; ++k) n.last_in[k] = nodes_[size_t(n.in[k])].out_version;
      n.last_mode = mode_version_;
      n.ever_computed = true;
      n.out_version = next_version();
    }
  }

  void forward_all() {
    std::vector<int> ids(nodes_.size());
    for (size_t i = 0; i < nodes_.size(); ++i) ids[i] = int(i);
    forward(ids);
  }

  const Tensor<T>& value(int id) const {
    const Node& n = node_at(id);
    if (!n.ever_computed && n.n_in > 0)
      throw std::invalid_argument("value: node '" + label(id) + "' not computed yet");
    return n.val;
  }

  // Gradient of the scalar loss with respect to every parameter (or only the
  // given subset; gradients of parameters outside the subset read as zero).
  void backward(int loss) { backward(loss, {}); }

  void backward(int loss, const std::vector<int>& target_params) {
    const Node& ln = node_at(loss);
    if (!ln.ever_computed)
      throw std::invalid_argument("backward: graph not yet run for loss '" + label(loss) + "'");
    if (ln.shape.numel() != 1)
      throw std::invalid_argument("backward: loss '" + label(loss) + "' is not scalar, shape " +
                                  ln.shape.str());

    std::vector<uint8_t> wanted(nodes_.size(), 0);
    if (target_params.empty()) {
      for (int id : param_ids_) wanted[size_t(id)] = 1;
    } else {
      for (int id : target_params) {
        if (node_at(id).op != Op::Param)
          throw std::invalid_argument("backward: target '" + label(id) + "' is not a parameter");
        wanted[size_t(id)] = 1;
      }
    }
    // has_target[i]: some wanted parameter is reachable below node i
    has_target_.assign(nodes_.size(), 0);
    for (size_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      uint8_t f = wanted[id];
      for (int k = 0; k < n.n_in && !f; ++k) f = has_target_[size_t(n.in[k])];
      has_target_[id] = f;
    }

    ++grad_pass_;
    grad_acc(loss).fill(T(1));
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[size_t(id)];
      if (n.grad_pass != grad_pass_) continue;
      if (n.n_in == 0) continue;
      backprop(n);
    }
  }

  Tensor<T> grad_of(int id) const {
    const Node& n = node_at(id);
    if (n.grad_pass == grad_pass_ && grad_pass_ > 0) return n.grad;
    return Tensor<T>::zeros(n.shape);
  }

  // Reference into the gradient buffer; requires the last backward pass to
  // have reached this node.
  const Tensor<T>& grad_ref(int id) const {
    const Node& n = node_at(id);
    if (n.grad_pass != grad_pass_ || grad_pass_ == 0)
      throw std::invalid_argument("grad_ref: no gradient for '" + label(id) +
                                  "' in the last backward pass");
    return n.grad;
  }

  // --- parameter / state access ----------------------------------------------

  const std::vector<int>& param_ids() const { return param_ids_; }
  int param_by_name(const std::string& name) const {
    auto it = param_index_.find(name);
    if (it == param_index_.end())
      throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor<T>& param_value(int id) {
    Node& n = node_mut(id);
    if (n.op != Op::Param) throw std::invalid_argument("param_value: not a parameter");
    return n.val;
  }
  void param_updated(int id) { node_mut(id).out_version = next_version(); }

  const std::string& name_of(int id) const { return node_at(id).name; }
  Shape shape(int id) const { return node_at(id).shape; }

  size_t n_states() const { return states_.size(); }
  StateTensor& state(size_t i) { return states_[i]; }
  const StateTensor& state(size_t i) const { return states_[i]; }
  void state_updated(size_t i) { states_[i].version = next_version(); }

  void mark_output(const std::string& name, int id) {
    check_id(id);
    outputs_[name] = id;
  }
  const std::map<std::string, int>& outputs() const { return outputs_; }

  size_t n_nodes() const { return nodes_.size(); }
  const Node& node_at(int id) const {
    check_id(id);
    return nodes_[size_t(id)];
  }

 private:
  std::vector<Node> nodes_;
  std::vector<StateTensor> states_;
  std::vector<int> param_ids_;
  std::map<std::string, int> param_index_;
  std::map<std::string, int> outputs_;
  std::vector<uint8_t> has_target_;
  uint64_t version_ = 1;
  uint64_t grad_pass_ = 0;
  uint64_t mode_version_ = 1;
  BnMode mode_ = BnMode::Train;

  uint64_t next_version() { return ++version_; }

  int add_state(const std::string& name, Tensor<T> init) {
    states_.push_back(StateTensor{name, std::move(init), next_version()});
    return int(states_.size()) - 1;
  }

  void check_id(int id) const {
    if (id < 0 || size_t(id) >= nodes_.size())
      throw std::invalid_argument("bad node id " + std::to_string(id));
  }
  Node& node_mut(int id) {
    check_id(id);
    return nodes_[size_t(id)];
  }
  std::string label(int id) const {
    const Node& n = nodes_[size_t(id)];
    return n.name.empty() ? std::string(op_name(n.op)) + "#" + std::to_string(id) : n.name;
  }
  [[noreturn]] void fail(const std::string& name, const std::string& msg) const {
    throw std::invalid_argument("node '" + (name.empty() ? "?" : name) + "': " + msg);
  }

  Node make_node(Op op, const std::string& name, Shape s) {
    Node n;
    n.op = op;
    n.name = name.empty() ? std::string(op_name(op)) + "#" + std::to_string(nodes_.size()) : name;
    n.shape = s;
    n.val = Tensor<T>::zeros(s);
    return n;
  }

  void set_inputs(Node& n, std::initializer_list<int> ids) {
    for (int id : ids) {
      check_id(id);
      n.in[n.n_in++] = id;
    }
  }

  int push(Node&& n) {
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  Shape shape_of(int id, const char* what) const {
    check_id(id);
    (void)what;
    return nodes_[size_t(id)].shape;
  }

  int unary(Op op, int x) {
    Node n = make_node(op, "", shape_of(x, "unary input"));
    set_inputs(n, {x});
    return push(std::move(n));
  }

  int binary(Op op, int a, int b) {
    const Shape as = shape_of(a, "lhs");
    const Shape bs = shape_of(b, "rhs");
    if (!(as == bs))
      throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch " + as.str() +
                                  " vs " + bs.str());
    Node n = make_node(op, "", as);
    set_inputs(n, {a, b});
    return push(std::move(n));
  }

  int reduce(Op op, int x, ReduceAxes a) {
    const Shape xs = shape_of(x, "reduce input");
    Shape os{a.b ? 1 : xs.b, a.h ? 1 : xs.h, a.w ? 1 : xs.w, a.c ? 1 : xs.c};
    Node n = make_node(op, "", os);
    n.axes = a;
    set_inputs(n, {x});
    return push(std::move(n));
  }

  Tensor<T>& grad_acc(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad_pass != grad_pass_) {
      if (!(n.grad.shape == n.shape)) n.grad = Tensor<T>::zeros(n.shape);
      else n.grad.fill(T(0));
      n.grad_pass = grad_pass_;
    }
    return n.grad;
  }
  bool wants_grad(int id) const { return has_target_[size_t(id)] != 0; }

  // --- forward kernels --------------------------------------------------------

  void compute(Node& n) {
    switch (n.op) {
      case Op::Input: case Op::Param: case Op::Const: return;
      case Op::Conv2d: return conv_fwd(n);
      case Op::TConv2d: return tconv_fwd(n);
      case Op::BatchNorm: return bn_fwd(n);
      case Op::Relu: return map1(n, [](double x) { return x > 0 ? x : 0; });
      case Op::LeakyRelu: {
        double s = n.k0;
        return map1(n, [s](double x) { return x > 0 ? x : s * x; });
      }
      case Op::Sigmoid:
        return map1(n, [](double x) {
          if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
          double e = std::exp(x);
          return e / (1.0 + e);
        });
      case Op::LogFloor: {
        double f = n.k0;
        return map1(n, [f](double x) { return std::log(x > f ? x : f); });
      }
      case Op::Exp: return map1(n, [](double x) { return std::exp(x); });
      case Op::Scale: {
        double k = n.k0;
        return map1(n, [k](double x) { return k * x; });
      }
      case Op::AddScalar: {
        double k = n.k0;
        return map1(n, [k](double x) { return x + k; });
      }
      case Op::Add: return map2(n, [](T a, T b) { return a + b; });
      case Op::Sub: return map2(n, [](T a, T b) { return a - b; });
      case Op::Mul: return map2(n, [](T a, T b) { return a * b; });
      case Op::BiasAdd: return bias_fwd(n);
      case Op::ReduceMean: return reduce_fwd(n, true);
      case Op::ReduceSum: return reduce_fwd(n, false);
      case Op::ConcatChannels: return concat_fwd(n);
      case Op::PadSpatial: return pad_fwd(n);
      case Op::CropSpatial: return crop_fwd(n);
      case Op::ResizeNearest: return resize_fwd(n);
      case Op::SoftQuant: return softq_fwd(n);
      case Op::RateEntropy: return rate_fwd(n);
    }
  }

  template <typename F>
  void map1(Node& n, F f) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    for (size_t i = 0; i < x.v.size(); ++i) n.val.v[i] = T(f(double(x.v[i])));
  }
  template <typename F>
  void map2(Node& n, F f) {
    const Tensor<T>& a = nodes_[size_t(n.in[0])].val;
    const Tensor<T>& b = nodes_[size_t(n.in[1])].val;
    for (size_t i = 0; i < a.v.size(); ++i) n.val.v[i] = f(a.v[i], b.v[i]);
  }

  void conv_fwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    const Tensor<T>& w = nodes_[size_t(n.in[1])].val;
    Tensor<T>& y = n.val;
    const int B = x.shape.b, H = x.shape.h, W = x.shape.w, C = x.shape.c;
    const int KH = n.conv.kh, KW = n.conv.kw, S = n.conv.stride, P = n.conv.pad;
    const int OH = y.shape.h, OW = y.shape.w, OC = y.shape.c;
    y.fill(T(0));
    for (int b = 0; b < B; ++b)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          T* out = y.ptr(b, oh, ow);
          for (int kh = 0; kh < KH; ++kh) {
            int ih = oh * S + kh - P;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < KW; ++kw) {
              int iw = ow * S + kw - P;
              if (iw < 0 || iw >= W) continue;
              const T* in = x.ptr(b, ih, iw);
              const T* wp = w.ptr(kh, kw, 0);
              for (int ic = 0; ic < C; ++ic) {
                T xv = in[ic];
                const T* wr = wp + size_t(ic) * OC;
                for (int oc = 0; oc < OC; ++oc) out[oc] += xv * wr[oc];
              }
            }
          }
        }
  }

  void tconv_fwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    const Tensor<T>& w = nodes_[size_t(n.in[1])].val;
    Tensor<T>& y = n.val;
    const int B = x.shape.b, H = x.shape.h, W = x.shape.w, C = x.shape.c;
    const int KH = n.conv.kh, KW = n.conv.kw, S = n.conv.stride, P = n.conv.pad;
    const int OH = y.shape.h, OW = y.shape.w, OC = y.shape.c;
    y.fill(T(0));
    for (int b = 0; b < B; ++b)
      for (int ih = 0; ih < H; ++ih)
        for (int iw = 0; iw < W; ++iw) {
          const T* in = x.ptr(b, ih, iw);
          for (int kh = 0; kh < KH; ++kh) {
            int oh = ih * S + kh - P;
            if (oh < 0 || oh >= OH) continue;
            for (int kw = 0; kw < KW; ++kw) {
              int ow = iw * S + kw - P;
              if (ow < 0 || ow >= OW) continue;
              T* out = y.ptr(b, oh, ow);
              const T* wp = w.ptr(kh, kw, 0);
              for (int ic = 0; ic < C; ++ic) {
                T xv = in[ic];
                const T* wr = wp + size_t(ic) * OC;
                for (int oc = 0; oc < OC; ++oc) out[oc] += xv * wr[oc];
              }
            }
          }
        }
  }

  void bn_fwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    const Tensor<T>& gamma = nodes_[size_t(n.in[1])].val;
    const Tensor<T>& beta = nodes_[size_t(n.in[2])].val;
    const int C = x.shape.c;
    const int64_t N = x.numel() / C;
    n.aux.assign(size_t(2 * C), 0.0);
    double* mean = n.aux.data();
    double* inv_std = n.aux.data() + C;
    n.train_mode_used = mode_ != BnMode::EvalRunning;

    if (mode_ != BnMode::EvalRunning) {
      std::vector<double> var(size_t(C), 0.0);
      for (int64_t i = 0; i < x.numel(); ++i) mean[i % C] += double(x.v[size_t(i)]);
      for (int c = 0; c < C; ++c) mean[c] /= double(N);
      for (int64_t i = 0; i < x.numel(); ++i) {
        double d = double(x.v[size_t(i)]) - mean[i % C];
        var[size_t(i % C)] += d * d;
      }
      for (int c = 0; c < C; ++c) var[size_t(c)] /= double(N);
      for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[size_t(c)] + n.k2);
      if (mode_ == BnMode::Train) {
        // running statistics, biased variance, momentum n.k1
        StateTensor& rm = states_[size_t(n.state_mean)];
        StateTensor& rv = states_[size_t(n.state_var)];
        for (int c = 0; c < C; ++c) {
          rm.val.v[size_t(c)] = T(n.k1 * double(rm.val.v[size_t(c)]) + (1 - n.k1) * mean[c]);
          rv.val.v[size_t(c)] =
              T(n.k1 * double(rv.val.v[size_t(c)]) + (1 - n.k1) * var[size_t(c)]);
        }
        rm.version = next_version();
        rv.version = next_version();
      }
    } else {
      const StateTensor& rm = states_[size_t(n.state_mean)];
      const StateTensor& rv = states_[size_t(n.state_var)];
      for (int c = 0; c < C; ++c) {
        mean[c] = double(rm.val.v[size_t(c)]);
        inv_std[c] = 1.0 / std::sqrt(double(rv.val.v[size_t(c)]) + n.k2);
      }
      n.last_state = rm.version;
    }
    for (int64_t i = 0; i < x.numel(); ++i) {
      int c = int(i % C);
      double xh = (double(x.v[size_t(i)]) - mean[c]) * inv_std[c];
      n.val.v[size_t(i)] = T(double(gamma.v[size_t(c)]) * xh + double(beta.v[size_t(c)]));
    }
  }

  void bias_fwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    const Tensor<T>& b = nodes_[size_t(n.in[1])].val;
    const int C = x.shape.c;
    for (int64_t i = 0; i < x.numel(); ++i)
      n.val.v[size_t(i)] = x.v[size_t(i)] + b.v[size_t(i % C)];
  }

  int64_t out_index(const Node& n, int b, int h, int w, int c) const {
    const Shape& os = n.shape;
    int ob = n.axes.b ? 0 : b, oh = n.axes.h ? 0 : h, ow = n.axes.w ? 0 : w, oc = n.axes.c ? 0 : c;
    return ((int64_t(ob) * os.h + oh) * os.w + ow) * os.c + oc;
  }

  void reduce_fwd(Node& n, bool mean) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    n.val.fill(T(0));
    const Shape& s = x.shape;
    for (int b = 0; b < s.b; ++b)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          const T* in = x.ptr(b, h, w);
          for (int c = 0; c < s.c; ++c) n.val.v[size_t(out_index(n, b, h, w, c))] += in[c];
        }
    if (mean) {
      T k = T(double(n.shape.numel()) / double(x.numel()));
      for (auto& v : n.val.v) v *= k;
    }
  }

  void concat_fwd(Node& n) {
    const Tensor<T>& a = nodes_[size_t(n.in[0])].val;
    const Tensor<T>& b = nodes_[size_t(n.in[1])].val;
    const Shape& s = n.shape;
    for (int bb = 0; bb < s.b; ++bb)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          T* out = n.val.ptr(bb, h, w);
          const T* pa = a.ptr(bb, h, w);
          const T* pb = b.ptr(bb, h, w);
          std::copy(pa, pa + a.shape.c, out);
          std::copy(pb, pb + b.shape.c, out + a.shape.c);
        }
  }

  void pad_fwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    n.val.fill(T(0));
    for (int b = 0; b < x.shape.b; ++b)
      for (int h = 0; h < x.shape.h; ++h)
        for (int w = 0; w < x.shape.w; ++w) {
          const T* in = x.ptr(b, h, w);
          T* out = n.val.ptr(b, h + n.box.top, w + n.box.left);
          std::copy(in, in + x.shape.c, out);
        }
  }

  void crop_fwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    for (int b = 0; b < n.shape.b; ++b)
      for (int h = 0; h < n.shape.h; ++h)
        for (int w = 0; w < n.shape.w; ++w) {
          const T* in = x.ptr(b, h + n.box.top, w + n.box.left);
          T* out = n.val.ptr(b, h, w);
          std::copy(in, in + x.shape.c, out);
        }
  }

  void resize_fwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    const int H = x.shape.h, W = x.shape.w;
    for (int b = 0; b < n.shape.b; ++b)
      for (int oh = 0; oh < n.shape.h; ++oh) {
        int ih = int(int64_t(oh) * H / n.shape.h);
        for (int ow = 0; ow < n.shape.w; ++ow) {
          int iw = int(int64_t(ow) * W / n.shape.w);
          const T* in = x.ptr(b, ih, iw);
          T* out = n.val.ptr(b, oh, ow);
          std::copy(in, in + x.shape.c, out);
        }
      }
  }

  void softq_fwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    n.aux.assign(x.v.size(), 0.0);
    for (size_t i = 0; i < x.v.size(); ++i) {
      SoftQuantEval e = soft_quantize_value(double(x.v[i]), n.qspec);
      n.val.v[i] = T(e.value);
      n.aux[i] = e.deriv;
    }
  }

  void rate_fwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    const QuantizerSpec& q = n.qspec;
    const size_t count = x.v.size();
    const int W = std::min(q.window, q.levels);
    n.aux_win.assign(count, 0);
    n.aux2.assign(count * size_t(W), 0.0);
    std::vector<double> ptilde(size_t(q.levels), 0.0);
    double wbuf[64];
    for (size_t i = 0; i < count; ++i) {
      int first, cnt;
      soft_weights(double(x.v[i]), q, first, cnt, wbuf);
      n.aux_win[i] = first;
      for (int k = 0; k < cnt; ++k) {
        n.aux2[i * size_t(W) + size_t(k)] = wbuf[k];
        ptilde[size_t(first + k)] += wbuf[k];
      }
    }
    double inv_n = 1.0 / double(count);
    double total = 0;
    for (double& p : ptilde) {
      p *= inv_n;
      total += p;
    }
    double h = 0;
    for (double p : ptilde) {
      double qj = p / total;
      if (qj > 0) h -= qj * std::log(qj);
    }
    // stash what backward needs: P, H, then dH/dptilde per level
    n.aux.assign(size_t(q.levels) + 2, 0.0);
    n.aux[0] = total;
    n.aux[1] = h;
    for (int j = 0; j < q.levels; ++j) {
      double qj = ptilde[size_t(j)] / total;
      n.aux[size_t(j) + 2] = qj > 0 ? -(std::log(qj) + h) / total : 0.0;
    }
    n.val.v[0] = T(h);
  }

  // --- backward kernels ---------------------------------------------------------

  void backprop(Node& n) {
    switch (n.op) {
      case Op::Input: case Op::Param: case Op::Const: return;
      case Op::Conv2d: return conv_bwd(n);
      case Op::TConv2d: return tconv_bwd(n);
      case Op::BatchNorm: return bn_bwd(n);
      case Op::Relu:
        return unary_bwd(n, [&](size_t i, double x) { (void)i; return x > 0 ? 1.0 : 0.0; });
      case Op::LeakyRelu: {
        double s = n.k0;
        return unary_bwd(n, [s](size_t, double x) { return x > 0 ? 1.0 : s; });
      }
      case Op::Sigmoid:
        return unary_bwd(n, [&](size_t i, double) {
          double y = double(n.val.v[i]);
          return y * (1.0 - y);
        });
      case Op::LogFloor: {
        double f = n.k0;
        return unary_bwd(n, [f](size_t, double x) { return x > f ? 1.0 / x : 0.0; });
      }
      case Op::Exp:
        return unary_bwd(n, [&](size_t i, double) { return double(n.val.v[i]); });
      case Op::Scale: {
        double k = n.k0;
        return unary_bwd(n, [k](size_t, double) { return k; });
      }
      case Op::AddScalar:
        return unary_bwd(n, [](size_t, double) { return 1.0; });
      case Op::Add: {
        if (wants_grad(n.in[0])) axpy(grad_acc(n.in[0]), n.grad, T(1));
        if (wants_grad(n.in[1])) axpy(grad_acc(n.in[1]), n.grad, T(1));
        return;
      }
      case Op::Sub: {
        if (wants_grad(n.in[0])) axpy(grad_acc(n.in[0]), n.grad, T(1));
        if (wants_grad(n.in[1])) axpy(grad_acc(n.in[1]), n.grad, T(-1));
        return;
      }
      case Op::Mul: {
        const Tensor<T>& a = nodes_[size_t(n.in[0])].val;
        const Tensor<T>& b = nodes_[size_t(n.in[1])].val;
        if (wants_grad(n.in[0])) {
          Tensor<T>& ga = grad_acc(n.in[0]);
          for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += n.grad.v[i] * b.v[i];
        }
        if (wants_grad(n.in[1])) {
          Tensor<T>& gb = grad_acc(n.in[1]);
          for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += n.grad.v[i] * a.v[i];
        }
        return;
      }
      case Op::BiasAdd: return bias_bwd(n);
      case Op::ReduceMean: return reduce_bwd(n, true);
      case Op::ReduceSum: return reduce_bwd(n, false);
      case Op::ConcatChannels: return concat_bwd(n);
      case Op::PadSpatial: return pad_bwd(n);
      case Op::CropSpatial: return crop_bwd(n);
      case Op::ResizeNearest: return resize_bwd(n);
      case Op::SoftQuant: return softq_bwd(n);
      case Op::RateEntropy: return rate_bwd(n);
    }
  }

  static void axpy(Tensor<T>& dst, const Tensor<T>& src, T k) {
    for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += k * src.v[i];
  }

  template <typename F>
  void unary_bwd(Node& n, F dfdx) {
    if (!wants_grad(n.in[0])) return;
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    Tensor<T>& gx = grad_acc(n.in[0]);
    for (size_t i = 0; i < gx.v.size(); ++i)
      gx.v[i] += n.grad.v[i] * T(dfdx(i, double(x.v[i])));
  }

  void conv_bwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    const Tensor<T>& w = nodes_[size_t(n.in[1])].val;
    const Tensor<T>& gy = n.grad;
    const int B = x.shape.b, H = x.shape.h, W = x.shape.w, C = x.shape.c;
    const int KH = n.conv.kh, KW = n.conv.kw, S = n.conv.stride, P = n.conv.pad;
    const int OH = n.shape.h, OW = n.shape.w, OC = n.shape.c;
    const bool want_x = wants_grad(n.in[0]), want_w = wants_grad(n.in[1]);
    Tensor<T>* gx = want_x ? &grad_acc(n.in[0]) : nullptr;
    Tensor<T>* gw = want_w ? &grad_acc(n.in[1]) : nullptr;
    for (int b = 0; b < B; ++b)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          const T* gout = gy.ptr(b, oh, ow);
          for (int kh = 0; kh < KH; ++kh) {
            int ih = oh * S + kh - P;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < KW; ++kw) {
              int iw = ow * S + kw - P;
              if (iw < 0 || iw >= W) continue;
              if (want_x) {
                T* gin = gx->ptr(b, ih, iw);
                const T* wp = w.ptr(kh, kw, 0);
                for (int ic = 0; ic < C; ++ic) {
                  const T* wr = wp + size_t(ic) * OC;
                  T acc = T(0);
                  for (int oc = 0; oc < OC; ++oc) acc += gout[oc] * wr[oc];
                  gin[ic] += acc;
                }
              }
              if (want_w) {
                const T* in = x.ptr(b, ih, iw);
                T* gwp = gw->ptr(kh, kw, 0);
                for (int ic = 0; ic < C; ++ic) {
                  T xv = in[ic];
                  T* gwr = gwp + size_t(ic) * OC;
                  for (int oc = 0; oc < OC; ++oc) gwr[oc] += xv * gout[oc];
                }
              }
            }
          }
        }
  }

  void tconv_bwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    const Tensor<T>& w = nodes_[size_t(n.in[1])].val;
    const Tensor<T>& gy = n.grad;
    const int B = x.shape.b, H = x.shape.h, W = x.shape.w, C = x.shape.c;
    const int KH = n.conv.kh, KW = n.conv.kw, S = n.conv.stride, P = n.conv.pad;
    const int OH = n.shape.h, OW = n.shape.w, OC = n.shape.c;
    const bool want_x = wants_grad(n.in[0]), want_w = wants_grad(n.in[1]);
    Tensor<T>* gx = want_x ? &grad_acc(n.in[0]) : nullptr;
    Tensor<T>* gw = want_w ? &grad_acc(n.in[1]) : nullptr;
    for (int b = 0; b < B; ++b)
      for (int ih = 0; ih < H; ++ih)
        for (int iw = 0; iw < W; ++iw) {
          const T* in = x.ptr(b, ih, iw);
          T* gin = want_x ? gx->ptr(b, ih, iw) : nullptr;
          for (int kh = 0; kh < KH; ++kh) {
            int oh = ih * S + kh - P;
            if (oh < 0 || oh >= OH) continue;
            for (int kw = 0; kw < KW; ++kw) {
              int ow = iw * S + kw - P;
              if (ow < 0 || ow >= OW) continue;
              const T* gout = gy.ptr(b, oh, ow);
              const T* wp = w.ptr(kh, kw, 0);
              if (want_x) {
                for (int ic = 0; ic < C; ++ic) {
                  const T* wr = wp + size_t(ic) * OC;
                  T acc = T(0);
                  for (int oc = 0; oc < OC; ++oc) acc += gout[oc] * wr[oc];
                  gin[ic] += acc;
                }
              }
              if (want_w) {
                T* gwp = gw->ptr(kh, kw, 0);
                for (int ic = 0; ic < C; ++ic) {
                  T xv = in[ic];
                  T* gwr = gwp + size_t(ic) * OC;
                  for (int oc = 0; oc < OC; ++oc) gwr[oc] += xv * gout[oc];
                }
              }
            }
          }
        }
  }

  void bn_bwd(Node& n) {
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    const Tensor<T>& gamma = nodes_[size_t(n.in[1])].val;
    const Tensor<T>& gy = n.grad;
    const int C = x.shape.c;
    const int64_t N = x.numel() / C;
    const double* mean = n.aux.data();
    const double* inv_std = n.aux.data() + C;

    std::vector<double> dbeta(size_t(C), 0.0), dgamma(size_t(C), 0.0);
    for (int64_t i = 0; i < x.numel(); ++i) {
      int c = int(i % C);
      double xh = (double(x.v[size_t(i)]) - mean[c]) * inv_std[c];
      dbeta[size_t(c)] += double(gy.v[size_t(i)]);
      dgamma[size_t(c)] += double(gy.v[size_t(i)]) * xh;
    }
    if (wants_grad(n.in[1])) {
      Tensor<T>& gg = grad_acc(n.in[1]);
      for (int c = 0; c < C; ++c) gg.v[size_t(c)] += T(dgamma[size_t(c)]);
    }
    if (wants_grad(n.in[2])) {
      Tensor<T>& gb = grad_acc(n.in[2]);
      for (int c = 0; c < C; ++c) gb.v[size_t(c)] += T(dbeta[size_t(c)]);
    }
    if (wants_grad(n.in[0])) {
      Tensor<T>& gx = grad_acc(n.in[0]);
      if (n.train_mode_used) {
        for (int64_t i = 0; i < x.numel(); ++i) {
          int c = int(i % C);
          double xh = (double(x.v[size_t(i)]) - mean[c]) * inv_std[c];
          double g = double(gy.v[size_t(i)]);
          gx.v[size_t(i)] += T(double(gamma.v[size_t(c)]) * inv_std[c] *
                               (g - dbeta[size_t(c)] / double(N) -
                                xh * dgamma[size_t(c)] / double(N)));
        }
      } else {
        for (int64_t i = 0; i < x.numel(); ++i) {
          int c = int(i % C);
          gx.v[size_t(i)] += T(double(gy.v[size_t(i)]) * double(gamma.v[size_t(c)]) * inv_std[c]);
        }
      }
    }
  }

  void bias_bwd(Node& n) {
    const int C = n.shape.c;
    if (wants_grad(n.in[0])) axpy(grad_acc(n.in[0]), n.grad, T(1));
    if (wants_grad(n.in[1])) {
      Tensor<T>& gb = grad_acc(n.in[1]);
      for (int64_t i = 0; i < n.grad.numel(); ++i) gb.v[size_t(i % C)] += n.grad.v[size_t(i)];
    }
  }

  void reduce_bwd(Node& n, bool mean) {
    if (!wants_grad(n.in[0])) return;
    Tensor<T>& gx = grad_acc(n.in[0]);
    const Shape& s = gx.shape;
    T k = mean ? T(double(n.shape.numel()) / double(gx.numel())) : T(1);
    for (int b = 0; b < s.b; ++b)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          T* g = gx.ptr(b, h, w);
          for (int c = 0; c < s.c; ++c)
            g[c] += k * n.grad.v[size_t(out_index(n, b, h, w, c))];
        }
  }

  void concat_bwd(Node& n) {
    const int ca = nodes_[size_t(n.in[0])].shape.c;
    const int cb = nodes_[size_t(n.in[1])].shape.c;
    const Shape& s = n.shape;
    const bool wa = wants_grad(n.in[0]), wb = wants_grad(n.in[1]);
    Tensor<T>* ga = wa ? &grad_acc(n.in[0]) : nullptr;
    Tensor<T>* gb = wb ? &grad_acc(n.in[1]) : nullptr;
    for (int bb = 0; bb < s.b; ++bb)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          const T* g = n.grad.ptr(bb, h, w);
          if (wa) {
            T* pa = ga->ptr(bb, h, w);
            for (int c = 0; c < ca; ++c) pa[c] += g[c];
          }
          if (wb) {
            T* pb = gb->ptr(bb, h, w);
            for (int c = 0; c < cb; ++c) pb[c] += g[ca + c];
          }
        }
  }

  void pad_bwd(Node& n) {
    if (!wants_grad(n.in[0])) return;
    Tensor<T>& gx = grad_acc(n.in[0]);
    for (int b = 0; b < gx.shape.b; ++b)
      for (int h = 0; h < gx.shape.h; ++h)
        for (int w = 0; w < gx.shape.w; ++w) {
          const T* g = n.grad.ptr(b, h + n.box.top, w + n.box.left);
          T* out = gx.ptr(b, h, w);
          for (int c = 0; c < gx.shape.c; ++c) out[c] += g[c];
        }
  }

  void crop_bwd(Node& n) {
    if (!wants_grad(n.in[0])) return;
    Tensor<T>& gx = grad_acc(n.in[0]);
    for (int b = 0; b < n.shape.b; ++b)
      for (int h = 0; h < n.shape.h; ++h)
        for (int w = 0; w < n.shape.w; ++w) {
          const T* g = n.grad.ptr(b, h, w);
          T* out = gx.ptr(b, h + n.box.top, w + n.box.left);
          for (int c = 0; c < n.shape.c; ++c) out[c] += g[c];
        }
  }

  void resize_bwd(Node& n) {
    if (!wants_grad(n.in[0])) return;
    Tensor<T>& gx = grad_acc(n.in[0]);
    const int H = gx.shape.h, W = gx.shape.w;
    for (int b = 0; b < n.shape.b; ++b)
      for (int oh = 0; oh < n.shape.h; ++oh) {
        int ih = int(int64_t(oh) * H / n.shape.h);
        for (int ow = 0; ow < n.shape.w; ++ow) {
          int iw = int(int64_t(ow) * W / n.shape.w);
          const T* g = n.grad.ptr(b, oh, ow);
          T* out = gx.ptr(b, ih, iw);
          for (int c = 0; c < n.shape.c; ++c) out[c] += g[c];
        }
      }
  }

  void softq_bwd(Node& n) {
    if (!wants_grad(n.in[0])) return;
    Tensor<T>& gx = grad_acc(n.in[0]);
    for (size_t i = 0; i < gx.v.size(); ++i)
      gx.v[i] += n.grad.v[i] * T(n.aux[i]);
  }

  void rate_bwd(Node& n) {
    if (!wants_grad(n.in[0])) return;
    const Tensor<T>& x = nodes_[size_t(n.in[0])].val;
    Tensor<T>& gx = grad_acc(n.in[0]);
    const QuantizerSpec& q = n.qspec;
    const int W = std::min(q.window, q.levels);
    const double gscalar = double(n.grad.v[0]);
    const double inv_n = 1.0 / double(x.v.size());
    const double* dhdp = n.aux.data() + 2;
    for (size_t i = 0; i < x.v.size(); ++i) {
      double z = clamp_to_range(double(x.v[i]), q);
      if (double(x.v[i]) < q.lo || double(x.v[i]) > q.hi) continue;  // clamp region
      int first = n.aux_win[i];
      const double* a = n.aux2.data() + i * size_t(W);
      double gbar = 0;
      for (int k = 0; k < W; ++k) {
        double gk = -2.0 * q.sigma * (z - q.center(first + k));
        gbar += a[k] * gk;
      }
      double acc = 0;
      for (int k = 0; k < W; ++k) {
        if (a[k] <= 0) continue;
        double gk = -2.0 * q.sigma * (z - q.center(first + k));
        acc += dhdp[first + k] * inv_n * a[k] * (gk - gbar);
      }
      gx.v[i] += T(gscalar * acc);
    }
  }
};

// Contract-shaped entry points: bind named inputs, evaluate every node, return
// the marked outputs / per-parameter gradients.
template <typename T>
std::map<std::string, Tensor<T>> forward(Graph<T>& g,
                                         const std::map<std::string, Tensor<T>>& inputs) {
  for (size_t id = 0; id < g.n_nodes(); ++id) {
    const auto& n = g.node_at(int(id));
    if (n.op == Op::Input) {
      auto it = inputs.find(n.name);
      if (it != inputs.end()) g.set_input(int(id), it->second);
    }
  }
  g.forward_all();
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, id] : g.outputs()) out[name] = g.value(id);
  return out;
}

template <typename T>
std::map<std::string, Tensor<T>> backward(Graph<T>& g, int loss) {
  g.backward(loss);
  std::map<std::string, Tensor<T>> grads;
  for (int id : g.param_ids()) grads[g.name_of(id)] = g.grad_of(id);
  return grads;
}

}  // namespace epicodec
