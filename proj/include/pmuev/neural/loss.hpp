#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "pmuev/neural/tensor.hpp"

namespace pmuev::nn {

// Row-wise softmax of (N, o) logits, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2) throw ShapeError("softmax: expected (N, o>=2) logits");
  const std::size_t n = logits.dim(0), o = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* z = logits.data() + r * o;
    const double m = *std::max_element(z, z + o);
    double total = 0.0;
    for (std::size_t j = 0; j < o; ++j) total += std::exp(static_cast<double>(z[j]) - m);
    for (std::size_t j = 0; j < o; ++j) p[r * o + j] = static_cast<T>(std::exp(static_cast<double>(z[j]) - m) / total);
  }
  return p;
}

template <typename T>
struct LossResult {
  double loss = 0.0;       // mean over the batch
  Tensor<T> grad;          // dLoss/dlogits, already divided by N
  Tensor<T> probabilities;
};

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(1) < 2) throw ShapeError("cross entropy: expected (N, o>=2) logits");
  const std::size_t n = logits.dim(0), o = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross entropy: label count differs from batch size");
  LossResult<T> out;
  out.probabilities = softmax(logits);
  out.grad = out.probabilities;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t y = labels[r];
    if (y >= o) throw OutOfRangeError("cross entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(o) + ")");
    const T* z = logits.data() + r * o;
    const double m = *std::max_element(z, z + o);
    double s = 0.0;
    for (std::size_t j = 0; j < o; ++j) s += std::exp(static_cast<double>(z[j]) - m);
    total += (m + std::log(s)) - static_cast<double>(z[y]);
    out.grad[r * o + y] -= T{1};
  }
  const T inv = static_cast<T>(1.0 / static_cast<double>(n));
  for (auto& g : out.grad.values()) g *= inv;
  out.loss = total / static_cast<double>(n);
  return out;
}

}  // namespace pmuev::nn
