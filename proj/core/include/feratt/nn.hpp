#pragma once

#include <memory>
#include <string>
#include <vector>

#include "feratt/rng.hpp"
#include "feratt/tensor.hpp"

namespace feratt::nn {

// Named view of one parameter blob and its gradient accumulator.
struct ParamView {
  std::string name;
  double* value;
  double* grad;
  size_t size;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<ParamView>* out) {}
  virtual void init(Rng& rng) {}
};

class Conv2d : public Layer {
 public:
  Conv2d(int cin, int cout, int kernel, int stride = 1, int pad = -1, int dilation = 1);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix, std::vector<ParamView>* out) override;
  void init(Rng& rng) override;

  Matrix weight;  // (k*k*cin) x cout
  Vector bias;
  Matrix weight_grad;
  Vector bias_grad;

 private:
  void im2col(const Tensor& x, int n, int oy0, int oy1, Matrix* cols) const;
  int strip_rows() const;
  void tap_ranges(int tap_off, int in_dim, int out_dim, int* o0, int* o1) const;
  Tensor forward_stride1(const Tensor& x);
  Tensor backward_stride1(const Tensor& grad_out);
  int cin_, cout_, k_, stride_, pad_, dilation_;
  Tensor input_;
  int out_h_ = 0, out_w_ = 0;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix, std::vector<ParamView>* out) override;
  void init(Rng& rng) override;

  Vector gamma, beta, gamma_grad, beta_grad;
  Vector running_mean, running_var;

 private:
  int c_;
  double momentum_, eps_;
  Tensor xhat_;
  Vector inv_std_;
  int count_ = 0;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor input_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

// Non-overlapping average pooling with stride == kernel.
class AvgPool2d : public Layer {
 public:
  explicit AvgPool2d(int kernel);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int k_;
  int in_h_ = 0, in_w_ = 0, n_ = 0, c_ = 0;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int in_h_ = 0, in_w_ = 0, n_ = 0, c_ = 0;
};

class UpsampleNearest2x : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int in_h_ = 0, in_w_ = 0, n_ = 0, c_ = 0;
};

// Dense layer on row-major (batch x features) matrices.
class Linear {
 public:
  Linear(int in, int out);
  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& grad_out);
  void collect_params(const std::string& prefix, std::vector<ParamView>* out);
  void init(Rng& rng);

  Matrix weight;  // in x out
  Vector bias;
  Matrix weight_grad;
  Vector bias_grad;

 private:
  Matrix input_;
};

// Row-wise softmax with cached output for the backward pass.
Matrix softmax_rows(const Matrix& logits);
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs);

// Sequential container; owns its layers.
class Sequential : public Layer {
 public:
  template <typename L, typename... Args>
  L* emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* ptr = layer.get();
    layers_.push_back(std::move(layer));
    return ptr;
  }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix, std::vector<ParamView>* out) override;
  void init(Rng& rng) override;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace feratt::nn
