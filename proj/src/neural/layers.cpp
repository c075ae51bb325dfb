#include "pmuev/neural/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace pmuev::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

void require_rank(const Shape& s, std::size_t rank, const char* who) {
  if (s.size() != rank) {
    throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) + " input, got " +
                     shape_string(s));
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2D

template <typename T>
Conv2D<T>::Conv2D(std::size_t in_channels, std::size_t filters, std::size_t kernel, Padding padding)
    : in_channels_(in_channels),
      filters_(filters),
      kernel_(kernel),
      padding_(padding),
      weight_({kernel, kernel, in_channels, filters}),
      bias_({filters}),
      weight_grad_({kernel, kernel, in_channels, filters}),
      bias_grad_({filters}) {
  if (in_channels == 0 || filters == 0 || kernel == 0) throw ShapeError("Conv2D: zero-sized configuration");
  if (padding == Padding::Same) {
    pad_top_ = (kernel - 1) / 2;
    pad_left_ = (kernel - 1) / 2;
  }
}

template <typename T>
Shape Conv2D<T>::output_shape(const Shape& input) const {
  require_rank(input, 4, "Conv2D");
  if (input[3] != in_channels_) {
    throw ShapeError("Conv2D: input has " + std::to_string(input[3]) + " channels, kernel expects " +
                     std::to_string(in_channels_));
  }
  if (padding_ == Padding::Same) return {input[0], input[1], input[2], filters_};
  if (input[1] < kernel_ || input[2] < kernel_) {
    throw ShapeError("Conv2D: valid convolution needs input at least " + std::to_string(kernel_) + "x" +
                     std::to_string(kernel_));
  }
  return {input[0], input[1] - kernel_ + 1, input[2] - kernel_ + 1, filters_};
}

template <typename T>
void Conv2D<T>::init_he(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(kernel_ * kernel_ * in_channels_);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (T& w : weight_.values()) w = static_cast<T>(dist(rng));
  bias_.fill(T{0});
}

template <typename T>
std::size_t Conv2D<T>::chunk_rows() const {
  const std::size_t cols = kernel_ * kernel_ * in_channels_;
  return std::max<std::size_t>(32, (std::size_t{1} << 17) / cols);
}

template <typename T>
void Conv2D<T>::im2col(const T* sample, std::size_t h, std::size_t w, std::size_t ow, std::size_t p0,
                       std::size_t p1) {
  const std::size_t u = in_channels_;
  const std::size_t k = kernel_;
  const std::size_t cols = k * k * u;
  col_.resize((p1 - p0) * cols);
  for (std::size_t p = p0; p < p1; ++p) {
    const std::size_t oy = p / ow, ox = p % ow;
    T* dst = col_.data() + (p - p0) * cols;
    const auto x0 = static_cast<std::ptrdiff_t>(ox) - static_cast<std::ptrdiff_t>(pad_left_);
    const bool row_inside = x0 >= 0 && x0 + static_cast<std::ptrdiff_t>(k) <= static_cast<std::ptrdiff_t>(w);
    for (std::size_t dy = 0; dy < k; ++dy) {
      T* d = dst + dy * k * u;
      const auto iy = static_cast<std::ptrdiff_t>(oy + dy) - static_cast<std::ptrdiff_t>(pad_top_);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
        std::fill(d, d + k * u, T{0});
        continue;
      }
      const T* src_row = sample + static_cast<std::size_t>(iy) * w * u;
      if (row_inside) {
        std::memcpy(d, src_row + static_cast<std::size_t>(x0) * u, k * u * sizeof(T));
        continue;
      }
      for (std::size_t dx = 0; dx < k; ++dx) {
        const auto ix = x0 + static_cast<std::ptrdiff_t>(dx);
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) {
          std::fill(d + dx * u, d + (dx + 1) * u, T{0});
        } else {
          std::memcpy(d + dx * u, src_row + static_cast<std::size_t>(ix) * u, u * sizeof(T));
        }
      }
    }
  }
}

template <typename T>
void Conv2D<T>::col2im_add(T* sample, std::size_t h, std::size_t w, std::size_t ow, std::size_t p0,
                           std::size_t p1) const {
  const std::size_t u = in_channels_;
  const std::size_t k = kernel_;
  const std::size_t cols = k * k * u;
  for (std::size_t p = p0; p < p1; ++p) {
    const std::size_t oy = p / ow, ox = p % ow;
    const T* src = dcol_.data() + (p - p0) * cols;
    const auto x0 = static_cast<std::ptrdiff_t>(ox) - static_cast<std::ptrdiff_t>(pad_left_);
    for (std::size_t dy = 0; dy < k; ++dy) {
      const auto iy = static_cast<std::ptrdiff_t>(oy + dy) - static_cast<std::ptrdiff_t>(pad_top_);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
      T* dst_row = sample + static_cast<std::size_t>(iy) * w * u;
      const T* s = src + dy * k * u;
      for (std::size_t dx = 0; dx < k; ++dx) {
        const auto ix = x0 + static_cast<std::ptrdiff_t>(dx);
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
        T* d = dst_row + static_cast<std::size_t>(ix) * u;
        const T* sv = s + dx * u;
        for (std::size_t c = 0; c < u; ++c) d[c] += sv[c];
      }
    }
  }
}

template <typename T>
const Tensor<T>& Conv2D<T>::forward(const Tensor<T>& x, Mode) {
  const Shape out_shape = output_shape(x.shape());
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = out_shape[1], ow = out_shape[2], pixels = oh * ow;
  const auto kk = static_cast<Eigen::Index>(kernel_ * kernel_ * in_channels_);
  const auto z = static_cast<Eigen::Index>(filters_);
  const std::size_t chunk = chunk_rows();

  input_ = x;
  out_.resize(out_shape);
  Eigen::Map<const RowMat<T>> wm(weight_.data(), kk, z);
  Eigen::Map<const RowVec<T>> bv(bias_.data(), z);
  for (std::size_t s = 0; s < n; ++s) {
    const T* sample = x.data() + s * h * w * in_channels_;
    for (std::size_t p0 = 0; p0 < pixels; p0 += chunk) {
      const std::size_t p1 = std::min(pixels, p0 + chunk);
      const auto rows = static_cast<Eigen::Index>(p1 - p0);
      im2col(sample, h, w, ow, p0, p1);
      Eigen::Map<const RowMat<T>> cm(col_.data(), rows, kk);
      Eigen::Map<RowMat<T>> om(out_.data() + (s * pixels + p0) * filters_, rows, z);
      om.noalias() = cm * wm;
      om.rowwise() += bv;
    }
  }
  return out_;
}

template <typename T>
const Tensor<T>& Conv2D<T>::backward(const Tensor<T>& grad_out) {
  const Shape out_shape = output_shape(input_.shape());
  if (grad_out.shape() != out_shape) throw ShapeError("Conv2D::backward: gradient shape mismatch");
  const std::size_t n = input_.dim(0), h = input_.dim(1), w = input_.dim(2);
  const std::size_t oh = out_shape[1], ow = out_shape[2], pixels = oh * ow;
  const auto kk = static_cast<Eigen::Index>(kernel_ * kernel_ * in_channels_);
  const auto z = static_cast<Eigen::Index>(filters_);
  const std::size_t chunk = chunk_rows();

  weight_grad_.fill(T{0});
  bias_grad_.fill(T{0});
  if (this->propagate_) {
    dx_.resize(input_.shape());
    dx_.fill(T{0});
  } else {
    dx_ = Tensor<T>();
  }

  Eigen::Map<const RowMat<T>> wm(weight_.data(), kk, z);
  Eigen::Map<RowMat<T>> dwm(weight_grad_.data(), kk, z);
  Eigen::Map<RowVec<T>> dbv(bias_grad_.data(), z);
  for (std::size_t s = 0; s < n; ++s) {
    const T* sample = input_.data() + s * h * w * in_channels_;
    for (std::size_t p0 = 0; p0 < pixels; p0 += chunk) {
      const std::size_t p1 = std::min(pixels, p0 + chunk);
      const auto rows = static_cast<Eigen::Index>(p1 - p0);
      im2col(sample, h, w, ow, p0, p1);
      Eigen::Map<const RowMat<T>> cm(col_.data(), rows, kk);
      Eigen::Map<const RowMat<T>> gm(grad_out.data() + (s * pixels + p0) * filters_, rows, z);
      dwm.noalias() += cm.transpose() * gm;
      dbv += gm.colwise().sum();
      if (this->propagate_) {
        dcol_.resize(col_.size());
        Eigen::Map<RowMat<T>> dcm(dcol_.data(), rows, kk);
        dcm.noalias() = gm * wm.transpose();
        col2im_add(dx_.data() + s * h * w * in_channels_, h, w, ow, p0, p1);
      }
    }
  }
  return dx_;
}

template <typename T>
std::vector<ParamRef<T>> Conv2D<T>::parameters() {
  return {{"kernel", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
}

// ---------------------------------------------------------------- ReLU

template <typename T>
const Tensor<T>& ReLU<T>::forward(const Tensor<T>& x, Mode) {
  out_.resize(x.shape());
  const T* in = x.data();
  T* o = out_.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = in[i] > T{0} ? in[i] : T{0};
  return out_;
}

template <typename T>
const Tensor<T>& ReLU<T>::backward(const Tensor<T>& grad_out) {
  if (grad_out.shape() != out_.shape()) throw ShapeError("ReLU::backward: gradient shape mismatch");
  dx_.resize(out_.shape());
  const T* g = grad_out.data();
  const T* o = out_.data();
  T* d = dx_.data();
  for (std::size_t i = 0; i < dx_.size(); ++i) d[i] = o[i] > T{0} ? g[i] : T{0};
  return dx_;
}

// ---------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_({channels}, T{1}),
      beta_({channels}, T{0}),
      gamma_grad_({channels}),
      beta_grad_({channels}),
      running_mean_({channels}, T{0}),
      running_var_({channels}, T{1}) {}

template <typename T>
const Tensor<T>& BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  if ((x.rank() != 2 && x.rank() != 4) || x.shape().back() != channels_) {
    throw ShapeError("BatchNorm: expected (N,H,W," + std::to_string(channels_) + ") or (N," +
                     std::to_string(channels_) + ") input, got " + shape_string(x.shape()));
  }
  const std::size_t c = channels_;
  const std::size_t rows = x.size() / c;
  last_mode_ = mode;
  inv_std_.assign(c, T{0});
  xhat_.resize(x.shape());
  out_.resize(x.shape());
  const T* in = x.data();

  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (mode == Mode::Train) {
    if (x.dim(0) < 2) throw InvalidParameterError("BatchNorm: training needs a batch of at least 2");
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = in + r * c;
      for (std::size_t k = 0; k < c; ++k) mean[k] += row[k];
    }
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = in + r * c;
      for (std::size_t k = 0; k < c; ++k) {
        const double d = row[k] - mean[k];
        var[k] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(rows);
    for (std::size_t k = 0; k < c; ++k) {
      running_mean_[k] = static_cast<T>(momentum_ * running_mean_[k] + (1.0 - momentum_) * mean[k]);
      running_var_[k] = static_cast<T>(momentum_ * running_var_[k] + (1.0 - momentum_) * var[k]);
    }
  } else {
    for (std::size_t k = 0; k < c; ++k) {
      mean[k] = running_mean_[k];
      var[k] = std::max<double>(0.0, running_var_[k]);
    }
  }
  std::vector<T> mu(c);
  for (std::size_t k = 0; k < c; ++k) {
    inv_std_[k] = static_cast<T>(1.0 / std::sqrt(var[k] + eps_));
    mu[k] = static_cast<T>(mean[k]);
  }
  T* xh = xhat_.data();
  T* o = out_.data();
  const T* g = gamma_.data();
  const T* b = beta_.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * c;
    for (std::size_t k = 0; k < c; ++k) {
      const T v = (in[base + k] - mu[k]) * inv_std_[k];
      xh[base + k] = v;
      o[base + k] = g[k] * v + b[k];
    }
  }
  return out_;
}

template <typename T>
const Tensor<T>& BatchNorm<T>::backward(const Tensor<T>& grad_out) {
  if (grad_out.shape() != xhat_.shape()) throw ShapeError("BatchNorm::backward: gradient shape mismatch");
  const std::size_t c = channels_;
  const std::size_t rows = grad_out.size() / c;
  const T* g = grad_out.data();
  const T* xh = xhat_.data();
  std::vector<double> dbeta(c, 0.0), dgamma(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * c;
    for (std::size_t k = 0; k < c; ++k) {
      dbeta[k] += g[base + k];
      dgamma[k] += static_cast<double>(g[base + k]) * xh[base + k];
    }
  }
  for (std::size_t k = 0; k < c; ++k) {
    beta_grad_[k] = static_cast<T>(dbeta[k]);
    gamma_grad_[k] = static_cast<T>(dgamma[k]);
  }
  dx_.resize(grad_out.shape());
  T* d = dx_.data();
  if (last_mode_ == Mode::Train) {
    const double m = static_cast<double>(rows);
    std::vector<T> scale(c), mb(c), mg(c);
    for (std::size_t k = 0; k < c; ++k) {
      scale[k] = static_cast<T>(gamma_[k] * inv_std_[k] / m);
      mb[k] = static_cast<T>(dbeta[k]);
      mg[k] = static_cast<T>(dgamma[k]);
    }
    const T mt = static_cast<T>(m);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * c;
      for (std::size_t k = 0; k < c; ++k) {
        d[base + k] = scale[k] * (mt * g[base + k] - mb[k] - xh[base + k] * mg[k]);
      }
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * c;
      for (std::size_t k = 0; k < c; ++k) d[base + k] = g[base + k] * gamma_[k] * inv_std_[k];
    }
  }
  return dx_;
}

template <typename T>
std::vector<ParamRef<T>> BatchNorm<T>::parameters() {
  return {{"gamma", &gamma_, &gamma_grad_}, {"beta", &beta_, &beta_grad_}};
}

template <typename T>
std::vector<BufferRef<T>> BatchNorm<T>::buffers() {
  return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
}

// ---------------------------------------------------------------- MaxPool2x2

template <typename T>
Shape MaxPool2x2<T>::output_shape(const Shape& input) const {
  require_rank(input, 4, "MaxPool2x2");
  return {input[0], (input[1] + 1) / 2, (input[2] + 1) / 2, input[3]};
}

template <typename T>
const Tensor<T>& MaxPool2x2<T>::forward(const Tensor<T>& x, Mode) {
  const Shape os = output_shape(x.shape());
  input_shape_ = x.shape();
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = os[1], ow = os[2];
  out_.resize(os);
  argmax_.resize(out_.size());
  const T* in = x.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t obase = ((s * oh + oy) * ow + ox) * c;
        T* o = out_.data() + obase;
        std::uint32_t* a = argmax_.data() + obase;
        bool first = true;
        // Row-major candidate order; strict > keeps the first maximum.
        for (std::size_t dy = 0; dy < 2; ++dy) {
          const std::size_t iy = 2 * oy + dy;
          if (iy >= h) continue;
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t ix = 2 * ox + dx;
            if (ix >= w) continue;
            const std::size_t ibase = ((s * h + iy) * w + ix) * c;
            const T* v = in + ibase;
            if (first) {
              for (std::size_t k = 0; k < c; ++k) {
                o[k] = v[k];
                a[k] = static_cast<std::uint32_t>(ibase + k);
              }
              first = false;
            } else {
              for (std::size_t k = 0; k < c; ++k) {
                if (v[k] > o[k]) {
                  o[k] = v[k];
                  a[k] = static_cast<std::uint32_t>(ibase + k);
                }
              }
            }
          }
        }
      }
    }
  }
  return out_;
}

template <typename T>
const Tensor<T>& MaxPool2x2<T>::backward(const Tensor<T>& grad_out) {
  if (grad_out.shape() != output_shape(input_shape_)) {
    throw ShapeError("MaxPool2x2::backward: gradient shape mismatch");
  }
  dx_.resize(input_shape_);
  dx_.fill(T{0});
  const T* g = grad_out.data();
  for (std::size_t i = 0; i < grad_out.size(); ++i) dx_[argmax_[i]] += g[i];
  return dx_;
}

// ---------------------------------------------------------------- SPP

template <typename T>
SpatialPyramidPool<T>::SpatialPyramidPool(std::vector<std::size_t> levels) : levels_(std::move(levels)) {
  if (levels_.empty()) throw InvalidParameterError("SPP: no pyramid levels");
  for (auto l : levels_) {
    if (l == 0) throw InvalidParameterError("SPP: level must be positive");
  }
}

template <typename T>
std::size_t SpatialPyramidPool<T>::bins() const {
  std::size_t b = 0;
  for (auto l : levels_) b += l * l;
  return b;
}

template <typename T>
std::size_t SpatialPyramidPool<T>::min_input_size() const {
  return *std::max_element(levels_.begin(), levels_.end());
}

template <typename T>
Shape SpatialPyramidPool<T>::output_shape(const Shape& input) const {
  require_rank(input, 4, "SPP");
  const std::size_t need = min_input_size();
  if (input[1] < need || input[2] < need) {
    throw InputTooSmallError("SPP: feature map " + std::to_string(input[1]) + "x" + std::to_string(input[2]) +
                             " is smaller than the " + std::to_string(need) + "x" + std::to_string(need) +
                             " pyramid level");
  }
  return {input[0], input[3] * bins()};
}

template <typename T>
const Tensor<T>& SpatialPyramidPool<T>::forward(const Tensor<T>& x, Mode) {
  const Shape os = output_shape(x.shape());
  input_shape_ = x.shape();
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t per_sample = os[1];
  out_.resize(os);
  argmax_.resize(out_.size());
  const T* in = x.data();
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t cursor = s * per_sample;
    for (std::size_t level : levels_) {
      for (std::size_t i = 0; i < level; ++i) {
        const std::size_t r0 = i * h / level;
        const std::size_t r1 = ((i + 1) * h + level - 1) / level;
        for (std::size_t j = 0; j < level; ++j) {
          const std::size_t c0 = j * w / level;
          const std::size_t c1 = ((j + 1) * w + level - 1) / level;
          T* o = out_.data() + cursor;
          std::uint32_t* a = argmax_.data() + cursor;
          for (std::size_t k = 0; k < c; ++k) o[k] = -std::numeric_limits<T>::infinity();
          for (std::size_t y = r0; y < r1; ++y) {
            for (std::size_t xx = c0; xx < c1; ++xx) {
              const std::size_t ibase = ((s * h + y) * w + xx) * c;
              const T* v = in + ibase;
              for (std::size_t k = 0; k < c; ++k) {
                if (v[k] > o[k] || (y == r0 && xx == c0)) {
                  o[k] = v[k];
                  a[k] = static_cast<std::uint32_t>(ibase + k);
                }
              }
            }
          }
          cursor += c;
        }
      }
    }
  }
  return out_;
}

template <typename T>
const Tensor<T>& SpatialPyramidPool<T>::backward(const Tensor<T>& grad_out) {
  if (grad_out.shape() != output_shape(input_shape_)) throw ShapeError("SPP::backward: gradient shape mismatch");
  dx_.resize(input_shape_);
  dx_.fill(T{0});
  const T* g = grad_out.data();
  for (std::size_t i = 0; i < grad_out.size(); ++i) dx_[argmax_[i]] += g[i];
  return dx_;
}

// ---------------------------------------------------------------- Dense

template <typename T>
Dense<T>::Dense(std::size_t in_features, std::size_t out_features)
    : in_features_(in_features),
      out_features_(out_features),
      weight_({out_features, in_features}),
      bias_({out_features}),
      weight_grad_({out_features, in_features}),
      bias_grad_({out_features}) {}

template <typename T>
Shape Dense<T>::output_shape(const Shape& input) const {
  if (input.size() < 2) throw ShapeError("Dense: expected (N, features) input");
  const std::size_t features = shape_size(input) / input[0];
  if (features != in_features_) {
    throw ShapeError("Dense: input has " + std::to_string(features) + " features, weights expect " +
                     std::to_string(in_features_));
  }
  return {input[0], out_features_};
}

template <typename T>
void Dense<T>::init_he(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> dist(0.0, scale * std::sqrt(2.0 / static_cast<double>(in_features_)));
  for (T& w : weight_.values()) w = static_cast<T>(dist(rng));
  bias_.fill(T{0});
}

template <typename T>
const Tensor<T>& Dense<T>::forward(const Tensor<T>& x, Mode) {
  const Shape os = output_shape(x.shape());
  input_ = x;
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  out_.resize(os);
  Eigen::Map<const RowMat<T>> xm(x.data(), n, static_cast<Eigen::Index>(in_features_));
  Eigen::Map<const RowMat<T>> wm(weight_.data(), static_cast<Eigen::Index>(out_features_), static_cast<Eigen::Index>(in_features_));
  Eigen::Map<const RowVec<T>> bv(bias_.data(), static_cast<Eigen::Index>(out_features_));
  Eigen::Map<RowMat<T>> om(out_.data(), n, static_cast<Eigen::Index>(out_features_));
  om.noalias() = xm * wm.transpose();
  om.rowwise() += bv;
  return out_;
}

template <typename T>
const Tensor<T>& Dense<T>::backward(const Tensor<T>& grad_out) {
  if (grad_out.shape() != output_shape(input_.shape())) throw ShapeError("Dense::backward: gradient shape mismatch");
  const auto n = static_cast<Eigen::Index>(input_.dim(0));
  const auto in = static_cast<Eigen::Index>(in_features_);
  const auto out = static_cast<Eigen::Index>(out_features_);
  Eigen::Map<const RowMat<T>> xm(input_.data(), n, in);
  Eigen::Map<const RowMat<T>> gm(grad_out.data(), n, out);
  Eigen::Map<const RowMat<T>> wm(weight_.data(), out, in);
  Eigen::Map<RowMat<T>> dwm(weight_grad_.data(), out, in);
  Eigen::Map<RowVec<T>> dbv(bias_grad_.data(), out);
  dwm.noalias() = gm.transpose() * xm;
  dbv = gm.colwise().sum();
  if (!this->propagate_) {
    dx_ = Tensor<T>();
    return dx_;
  }
  dx_.resize(input_.shape());
  Eigen::Map<RowMat<T>> dxm(dx_.data(), n, in);
  dxm.noalias() = gm * wm;
  return dx_;
}

template <typename T>
std::vector<ParamRef<T>> Dense<T>::parameters() {
  return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
}

// ---------------------------------------------------------------- Dropout

template <typename T>
Dropout<T>::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidParameterError("Dropout: rate must lie in [0, 1)");
}

template <typename T>
const Tensor<T>& Dropout<T>::forward(const Tensor<T>& x, Mode mode) {
  identity_ = mode == Mode::Infer || rate_ == 0.0;
  if (identity_) return x;
  std::bernoulli_distribution keep(1.0 - rate_);
  const T survivor = static_cast<T>(1.0 / (1.0 - rate_));
  scale_.resize(x.size());
  out_.resize(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    scale_[i] = keep(rng_) ? survivor : T{0};
    out_[i] = x[i] * scale_[i];
  }
  return out_;
}

template <typename T>
const Tensor<T>& Dropout<T>::backward(const Tensor<T>& grad_out) {
  if (identity_) return grad_out;
  if (grad_out.size() != scale_.size()) throw ShapeError("Dropout::backward: gradient shape mismatch");
  dx_.resize(grad_out.shape());
  for (std::size_t i = 0; i < dx_.size(); ++i) dx_[i] = grad_out[i] * scale_[i];
  return dx_;
}

// ---------------------------------------------------------------- Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Mode mode) {
  if (layers_.empty()) return x;
  const Tensor<T>* cur = &layers_.front()->forward(x, mode);
  for (std::size_t i = 1; i < layers_.size(); ++i) cur = &layers_[i]->forward(*cur, mode);
  return *cur;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T>* g = &grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = &layers_[i]->backward(*g);
    if (!layers_[i]->propagates_input_grad()) break;
  }
  return *g;
}

template <typename T>
Shape Sequential<T>::output_shape(Shape input) const {
  for (const auto& l : layers_) input = l->output_shape(input);
  return input;
}

template <typename T>
std::vector<ParamRef<T>> Sequential<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (auto& l : layers_) {
    for (auto p : l->parameters()) {
      p.name = l->name() + "." + p.name;
      out.push_back(std::move(p));
    }
  }
  return out;
}

template <typename T>
std::vector<BufferRef<T>> Sequential<T>::buffers() {
  std::vector<BufferRef<T>> out;
  for (auto& l : layers_) {
    for (auto b : l->buffers()) {
      b.name = l->name() + "." + b.name;
      out.push_back(std::move(b));
    }
  }
  return out;
}

template <typename T>
std::size_t Sequential<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& l : layers_) total += l->parameter_count();
  return total;
}

#define PMUEV_INSTANTIATE(T)            \
  template class Conv2D<T>;             \
  template class ReLU<T>;               \
  template class BatchNorm<T>;          \
  template class MaxPool2x2<T>;         \
  template class SpatialPyramidPool<T>; \
  template class Dense<T>;              \
  template class Dropout<T>;            \
  template class Sequential<T>;

PMUEV_INSTANTIATE(float)
PMUEV_INSTANTIATE(double)

#undef PMUEV_INSTANTIATE

}  // namespace pmuev::nn
