#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "epicodec/tensor.hpp"

namespace epicodec {

// Uniform scalar quantizer over [lo, hi] with T levels, plus the softened
// differentiable form used during training. All internal math runs in double
// regardless of the tensor precision so that index decisions stay stable.
struct QuantizerSpec {
  int levels = 90000;   // T
  double lo = -1.0;
  double hi = 1.0;
  double sigma = 0.0;   // > 0; see make() for the default
  int window = 9;       // W, odd: number of nearest centers in the soft sum

  double spacing() const { return (hi - lo) / double(levels - 1); }
  double center(int j) const { return lo + double(j) * spacing(); }

  void validate() const {
    if (levels < 2) throw std::invalid_argument("quantizer: levels must be >= 2");
    if (!(hi > lo)) throw std::invalid_argument("quantizer: hi must exceed lo");
    if (!(sigma > 0)) throw std::invalid_argument("quantizer: sigma must be positive");
    if (window < 1 || window % 2 == 0)
      throw std::invalid_argument("quantizer: window must be a positive odd count");
  }

  // sigma_spacing_sq is the dimensionless product sigma*spacing^2; 50 keeps a
  // neighboring center's weight at ~e^-50 of the nearest.
  static QuantizerSpec make(int levels = 90000, double lo = -1.0, double hi = 1.0,
                            double sigma_spacing_sq = 50.0, int window = 9) {
    QuantizerSpec q;
    q.levels = levels;
    q.lo = lo;
    q.hi = hi;
    q.window = window;
    double s = q.spacing();
    q.sigma = sigma_spacing_sq / (s * s);
    q.validate();
    return q;
  }
};

inline double clamp_to_range(double z, const QuantizerSpec& q) {
  return std::min(q.hi, std::max(q.lo, z));
}

// Nearest-center index; exact midpoints resolve to the lower index.
inline int32_t hard_quantize_value(double z, const QuantizerSpec& q) {
  double x = (clamp_to_range(z, q) - q.lo) / q.spacing();
  int32_t idx = int32_t(std::ceil(x - 0.5));
  if (idx < 0) idx = 0;
  if (idx >= q.levels) idx = q.levels - 1;
  return idx;
}

inline double dequantize_index(int32_t idx, const QuantizerSpec& q) {
  if (idx < 0 || idx >= q.levels)
    throw std::out_of_range("quantizer: index " + std::to_string(idx) +
                            " outside [0," + std::to_string(q.levels) + ")");
  return q.center(idx);
}

// Window of the W centers nearest to z (shifts rather than shrinks at the
// range ends so the count stays W whenever T >= W).
inline void soft_window(double z, const QuantizerSpec& q, int& first, int& count) {
  int w = std::min(q.window, q.levels);
  int nearest = hard_quantize_value(z, q);
  first = std::clamp(nearest - w / 2, 0, q.levels - w);
  count = w;
}

// Softmax weights exp(-sigma*(z-c_j)^2) over the window, normalized.
// z is clamped into [lo,hi] first, matching the latent-code contract.
inline void soft_weights(double z, const QuantizerSpec& q, int& first, int& count,
                         double* weights /* size >= count */) {
  double zc = clamp_to_range(z, q);
  soft_window(zc, q, first, count);
  double best = -1e300;
  for (int k = 0; k < count; ++k) {
    double d = zc - q.center(first + k);
    weights[k] = -q.sigma * d * d;
    best = std::max(best, weights[k]);
  }
  double sum = 0;
  for (int k = 0; k < count; ++k) {
    weights[k] = std::exp(weights[k] - best);
    sum += weights[k];
  }
  for (int k = 0; k < count; ++k) weights[k] /= sum;
}

struct SoftQuantEval {
  double value;  // softmax-weighted sum of window centers
  double deriv;  // d value / d z (0 where the clamp is active)
};

inline SoftQuantEval soft_quantize_value(double z, const QuantizerSpec& q) {
  int first, count;
  double w[64];
  soft_weights(z, q, first, count, w);
  double mean = 0, mean_sq = 0;
  for (int k = 0; k < count; ++k) {
    double c = q.center(first + k);
    mean += w[k] * c;
    mean_sq += w[k] * c * c;
  }
  double deriv = 2.0 * q.sigma * (mean_sq - mean * mean);
  if (z < q.lo || z > q.hi) deriv = 0.0;
  return {mean, deriv};
}

template <typename T>
Tensor<int32_t> hard_quantize(const Tensor<T>& z, const QuantizerSpec& q) {
  q.validate();
  Tensor<int32_t> out(z.shape);
  for (size_t i = 0; i < z.v.size(); ++i) out.v[i] = hard_quantize_value(double(z.v[i]), q);
  return out;
}

template <typename T>
Tensor<T> dequantize(const Tensor<int32_t>& idx, const QuantizerSpec& q) {
  q.validate();
  Tensor<T> out(idx.shape);
  for (size_t i = 0; i < idx.v.size(); ++i) out.v[i] = T(dequantize_index(idx.v[i], q));
  return out;
}

template <typename T>
Tensor<T> soft_quantize(const Tensor<T>& z, const QuantizerSpec& q) {
  q.validate();
  Tensor<T> out(z.shape);
  for (size_t i = 0; i < z.v.size(); ++i)
    out.v[i] = T(soft_quantize_value(double(z.v[i]), q).value);
  return out;
}

// Posterior probability of each level: the per-element softmax masses averaged
// over all latent scalars, then renormalized (a numerical no-op safety net).
struct ProbabilityModel {
  std::vector<double> p;  // size T, non-negative, sums to 1

  double entropy_nats() const {
    double h = 0;
    for (double pj : p)
      if (pj > 0) h -= pj * std::log(pj);
    return h;
  }
};

template <typename T>
ProbabilityModel estimate_probs(const Tensor<T>& z, const QuantizerSpec& q) {
  q.validate();
  if (z.numel() < 1) throw std::invalid_argument("estimate_probs: empty latent");
  ProbabilityModel m;
  m.p.assign(size_t(q.levels), 0.0);
  double w[64];
  for (size_t i = 0; i < z.v.size(); ++i) {
    int first, count;
    soft_weights(double(z.v[i]), q, first, count, w);
    for (int k = 0; k < count; ++k) m.p[size_t(first + k)] += w[k];
  }
  double total = 0;
  for (double& pj : m.p) total += pj;
  for (double& pj : m.p) pj /= total;
  return m;
}

inline double entropy_nats(const ProbabilityModel& m) { return m.entropy_nats(); }

}  // namespace epicodec
