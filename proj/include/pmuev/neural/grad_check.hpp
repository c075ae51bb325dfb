#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "pmuev/neural/layers.hpp"

namespace pmuev::nn {

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coordinates = 64;  // per tensor
  std::uint64_t seed = 7;
  Mode mode = Mode::Train;
  bool check_input = true;
  // Called before every forward pass, e.g. to reseed dropout.
  std::function<void()> before_forward;
};

struct GradCheckReport {
  double input_error = 0.0;
  double parameter_error = 0.0;
  double max_error() const { return std::max(input_error, parameter_error); }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Compares analytic gradients of L = sum(r * f(x)) for a fixed random r against
// central differences. Works for any Layer<double> or Sequential<double>.
template <typename Module>
GradCheckReport grad_check(Module& module, const Tensor<double>& input, const GradCheckOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  auto run = [&](const Tensor<double>& x) {
    if (opt.before_forward) opt.before_forward();
    return module.forward(x, opt.mode);
  };

  Tensor<double> y = run(input);
  Tensor<double> r(y.shape());
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : r.values()) v = nd(rng);
  auto loss = [&](const Tensor<double>& x) {
    Tensor<double> out = run(x);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
    return s;
  };

  y = run(input);
  Tensor<double> dx = module.backward(r);  // copy: the layer reuses its buffer
  auto params = module.parameters();
  std::vector<Tensor<double>> analytic;
  for (auto& p : params) analytic.push_back(*p.grad);

  auto sample = [&](std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n > opt.max_coordinates) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_coordinates);
    }
    return idx;
  };

  GradCheckReport rep;
  if (opt.check_input && !dx.empty()) {
    Tensor<double> x = input;
    for (std::size_t i : sample(x.size())) {
      const double orig = x[i];
      x[i] = orig + opt.step;
      const double lp = loss(x);
      x[i] = orig - opt.step;
      const double lm = loss(x);
      x[i] = orig;
      rep.input_error = std::max(rep.input_error, relative_error(dx[i], (lp - lm) / (2 * opt.step)));
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<double>& w = *params[k].value;
    for (std::size_t i : sample(w.size())) {
      const double orig = w[i];
      w[i] = orig + opt.step;
      const double lp = loss(input);
      w[i] = orig - opt.step;
      const double lm = loss(input);
      w[i] = orig;
      rep.parameter_error =
          std::max(rep.parameter_error, relative_error(analytic[k][i], (lp - lm) / (2 * opt.step)));
    }
  }
  return rep;
}

}  // namespace pmuev::nn
