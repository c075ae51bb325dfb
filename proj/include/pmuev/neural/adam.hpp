#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pmuev/neural/layers.hpp"

namespace pmuev::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Moments are bound to parameters by position; the list must keep the same
  // order and shapes from step to step.
  void step(const std::vector<ParamRef<T>>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value->size(), 0.0);
        v_.emplace_back(p.value->size(), 0.0);
      }
    }
    if (params.size() != m_.size()) throw ShapeError("Adam: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      if (p.value->size() != m_[i].size() || p.grad->shape() != p.value->shape()) {
        throw ShapeError("Adam: shape mismatch for parameter " + p.name);
      }
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      T* w = params[i].value->data();
      const T* g = params[i].grad->data();
      double* m = m_[i].data();
      double* v = v_[i].data();
      for (std::size_t k = 0; k < m_[i].size(); ++k) {
        const double gk = g[k];
        m[k] = b1 * m[k] + (1.0 - b1) * gk;
        v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        w[k] = static_cast<T>(w[k] - config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon));
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace pmuev::nn
