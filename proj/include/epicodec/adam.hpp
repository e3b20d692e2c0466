#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "epicodec/tensor.hpp"

namespace epicodec {

// Adam with bias correction and an exponentially decayed learning rate
// (effective lr = base_lr * decay_rate^epoch, updated once per epoch).
template <typename T>
struct AdamState {
  int64_t step = 0;
  int epoch = 0;
  double base_lr = 1e-4;
  double decay_rate = 0.95;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  double effective_lr() const { return base_lr * std::pow(decay_rate, epoch); }
};

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads,
               std::span<const std::string> names, AdamState<T>& st) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  if (st.m.empty()) {
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (auto* p : params) {
      st.m.push_back(Tensor<T>::zeros(p->shape));
      st.v.push_back(Tensor<T>::zeros(p->shape));
    }
  }
  if (st.m.size() != params.size())
    throw std::invalid_argument("adam_step: state was initialized for a different parameter set");

  for (size_t i = 0; i < params.size(); ++i) {
    if (!(grads[i]->shape == params[i]->shape))
      throw std::invalid_argument("adam_step: gradient shape " + grads[i]->shape.str() +
                                  " != parameter shape " + params[i]->shape.str() + " for '" +
                                  std::string(i < names.size() ? names[i] : "?") + "'");
    if (!grads[i]->all_finite())
      throw TrainAborted("non-finite gradient for parameter '" +
                         std::string(i < names.size() ? names[i] : "?") + "'");
  }

  st.step += 1;
  const double lr = st.effective_lr();
  const double c1 = 1.0 - std::pow(st.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, double(st.step));
  const T b1 = T(st.beta1), b2 = T(st.beta2);
  const T ob1 = T(1.0 - st.beta1), ob2 = T(1.0 - st.beta2);

  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const Tensor<T>& g = *grads[i];
    Tensor<T>& m = st.m[i];
    Tensor<T>& v = st.v[i];
    for (size_t j = 0; j < p.v.size(); ++j) {
      m.v[j] = b1 * m.v[j] + ob1 * g.v[j];
      v.v[j] = b2 * v.v[j] + ob2 * g.v[j] * g.v[j];
      double mhat = double(m.v[j]) / c1;
      double vhat = double(v.v[j]) / c2;
      p.v[j] = T(double(p.v[j]) - lr * mhat / (std::sqrt(vhat) + st.epsilon));
    }
  }
}

}  // namespace epicodec
