#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pmuev/neural/tensor.hpp"

namespace pmuev::nn {

enum class Mode : std::uint8_t { Train, Infer };

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
};

// Non-trainable state that still belongs in a checkpoint (batch-norm running
// statistics).
template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>* value = nullptr;
};

// A layer caches whatever forward() needs so that the next backward() can
// return dL/dinput and overwrite its own parameter gradients. Returned
// references point at buffers owned by the layer (or, for identity layers, at
// the argument) and stay valid until the next call on the same layer.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual const Tensor<T>& forward(const Tensor<T>& x, Mode mode) = 0;
  virtual const Tensor<T>& backward(const Tensor<T>& grad_out) = 0;

  virtual std::vector<ParamRef<T>> parameters() { return {}; }
  virtual std::vector<BufferRef<T>> buffers() { return {}; }
  // Trainable parameters plus buffers; batch norm counts 4 per channel.
  virtual std::size_t parameter_count() const { return 0; }
  virtual std::size_t trainable_count() const { return parameter_count(); }

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  // The first layer of a network never needs dL/dinput; skipping it saves the
  // most expensive GEMM of its backward pass.
  void set_propagate_input_grad(bool on) { propagate_ = on; }
  bool propagates_input_grad() const { return propagate_; }

 protected:
  std::string name_;
  bool propagate_ = true;
};

enum class Padding : std::uint8_t { Same, Valid };

// Stride-1 2-D convolution over NHWC input with a k x k x U x Z kernel.
template <typename T>
class Conv2D final : public Layer<T> {
 public:
  Conv2D(std::size_t in_channels, std::size_t filters, std::size_t kernel, Padding padding);

  std::string kind() const override { return "Conv2D"; }
  Shape output_shape(const Shape& input) const override;
  const Tensor<T>& forward(const Tensor<T>& x, Mode mode) override;
  const Tensor<T>& backward(const Tensor<T>& grad_out) override;
  std::vector<ParamRef<T>> parameters() override;
  std::size_t parameter_count() const override { return weight_.size() + bias_.size(); }

  // Zero-mean Gaussian with variance 2 / fan_in; zero bias.
  void init_he(std::mt19937_64& rng);

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight_grad() const { return weight_grad_; }
  const Tensor<T>& bias_grad() const { return bias_grad_; }

 private:
  // Patch rows for output pixels [p0, p1) of one sample.
  void im2col(const T* sample, std::size_t h, std::size_t w, std::size_t ow, std::size_t p0, std::size_t p1);
  void col2im_add(T* sample, std::size_t h, std::size_t w, std::size_t ow, std::size_t p0, std::size_t p1) const;
  std::size_t chunk_rows() const;

  std::size_t in_channels_, filters_, kernel_;
  Padding padding_;
  std::size_t pad_top_ = 0, pad_left_ = 0;
  Tensor<T> weight_, bias_, weight_grad_, bias_grad_;
  Tensor<T> input_, out_, dx_;
  AlignedVector<T> col_;
  AlignedVector<T> dcol_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  std::string kind() const override { return "ReLU"; }
  Shape output_shape(const Shape& input) const override { return input; }
  const Tensor<T>& forward(const Tensor<T>& x, Mode mode) override;
  const Tensor<T>& backward(const Tensor<T>& grad_out) override;

 private:
  Tensor<T> out_, dx_;
};

// Per-channel normalisation over (batch, H, W) for NHWC input, or over the
// batch for (N, D) input.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(std::size_t channels, double eps = 1e-5, double momentum = 0.9);

  std::string kind() const override { return "BatchNorm"; }
  Shape output_shape(const Shape& input) const override { return input; }
  const Tensor<T>& forward(const Tensor<T>& x, Mode mode) override;
  const Tensor<T>& backward(const Tensor<T>& grad_out) override;
  std::vector<ParamRef<T>> parameters() override;
  std::vector<BufferRef<T>> buffers() override;
  std::size_t parameter_count() const override { return 4 * channels_; }
  std::size_t trainable_count() const override { return 2 * channels_; }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

 private:
  std::size_t channels_;
  double eps_, momentum_;
  Tensor<T> gamma_, beta_, gamma_grad_, beta_grad_, running_mean_, running_var_;
  Mode last_mode_ = Mode::Infer;
  Tensor<T> xhat_, out_, dx_;
  std::vector<T> inv_std_;
};

// 2x2, stride 2. Odd sizes are padded on the right/bottom with -inf, so the
// output is ceil(H/2) x ceil(W/2).
template <typename T>
class MaxPool2x2 final : public Layer<T> {
 public:
  std::string kind() const override { return "MaxPool2x2"; }
  Shape output_shape(const Shape& input) const override;
  const Tensor<T>& forward(const Tensor<T>& x, Mode mode) override;
  const Tensor<T>& backward(const Tensor<T>& grad_out) override;

 private:
  Shape input_shape_;
  std::vector<std::uint32_t> argmax_;
  Tensor<T> out_, dx_;
};

// Spatial pyramid max-pooling. For level L, bin (i, j) covers rows
// [floor(iH/L), ceil((i+1)H/L)) and the analogous columns. Output per sample
// is level-major, then bin-row-major, then channel.
template <typename T>
class SpatialPyramidPool final : public Layer<T> {
 public:
  explicit SpatialPyramidPool(std::vector<std::size_t> levels);

  std::string kind() const override { return "SPP"; }
  Shape output_shape(const Shape& input) const override;
  const Tensor<T>& forward(const Tensor<T>& x, Mode mode) override;
  const Tensor<T>& backward(const Tensor<T>& grad_out) override;

  const std::vector<std::size_t>& levels() const { return levels_; }
  std::size_t bins() const;
  std::size_t min_input_size() const;

 private:
  std::vector<std::size_t> levels_;
  Shape input_shape_;
  std::vector<std::uint32_t> argmax_;
  Tensor<T> out_, dx_;
};

// y = x W^T + b for (N, in) input; W is (out, in).
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in_features, std::size_t out_features);

  std::string kind() const override { return "Dense"; }
  Shape output_shape(const Shape& input) const override;
  const Tensor<T>& forward(const Tensor<T>& x, Mode mode) override;
  const Tensor<T>& backward(const Tensor<T>& grad_out) override;
  std::vector<ParamRef<T>> parameters() override;
  std::size_t parameter_count() const override { return weight_.size() + bias_.size(); }

  void init_he(std::mt19937_64& rng, double scale = 1.0);

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight_grad() const { return weight_grad_; }
  const Tensor<T>& bias_grad() const { return bias_grad_; }

 private:
  std::size_t in_features_, out_features_;
  Tensor<T> weight_, bias_, weight_grad_, bias_grad_;
  Tensor<T> input_, out_, dx_;
};

// Inverted dropout: in training each unit is zeroed with probability `rate`
// and survivors are scaled by 1 / (1 - rate). Identity at inference.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  Dropout(double rate, std::uint64_t seed);

  std::string kind() const override { return "Dropout"; }
  Shape output_shape(const Shape& input) const override { return input; }
  const Tensor<T>& forward(const Tensor<T>& x, Mode mode) override;
  const Tensor<T>& backward(const Tensor<T>& grad_out) override;

  double rate() const { return rate_; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

 private:
  double rate_;
  std::mt19937_64 rng_;
  bool identity_ = true;
  std::vector<T> scale_;
  Tensor<T> out_, dx_;
};

// Ordered layer stack.
template <typename T>
class Sequential {
 public:
  template <typename L, typename... Args>
  L& add(std::string name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    layer->set_name(std::move(name));
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& grad_out);
  Shape output_shape(Shape input) const;

  std::vector<ParamRef<T>> parameters();
  std::vector<BufferRef<T>> buffers();
  std::size_t parameter_count() const;

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace pmuev::nn
