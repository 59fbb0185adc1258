#include "feratt/nn.hpp"

#include <cmath>

namespace feratt::nn {

Conv2d::Conv2d(int cin, int cout, int kernel, int stride, int pad, int dilation)
    : cin_(cin), cout_(cout), k_(kernel), stride_(stride),
      pad_(pad >= 0 ? pad : dilation * (kernel - 1) / 2), dilation_(dilation) {
  weight = Matrix::Zero(k_ * k_ * cin_, cout_);
  bias = Vector::Zero(cout_);
  weight_grad = Matrix::Zero(k_ * k_ * cin_, cout_);
  bias_grad = Vector::Zero(cout_);
}

void Conv2d::init(Rng& rng) {
  double stddev = std::sqrt(2.0 / (k_ * k_ * cin_));
  for (int i = 0; i < weight.rows(); ++i)
    for (int j = 0; j < weight.cols(); ++j) weight(i, j) = rng.normal(0.0, stddev);
  bias.setZero();
}

void Conv2d::collect_params(const std::string& prefix, std::vector<ParamView>* out) {
  out->push_back({prefix + ".weight", weight.data(), weight_grad.data(),
                  static_cast<size_t>(weight.size())});
  out->push_back({prefix + ".bias", bias.data(), bias_grad.data(),
                  static_cast<size_t>(bias.size())});
}

void Conv2d::im2col(const Tensor& x, int n, int oy0, int oy1, Matrix* cols) const {
  const int wo = out_w_;
  cols->resize(static_cast<Eigen::Index>(oy1 - oy0) * wo, k_ * k_ * cin_);
  for (int oy = oy0; oy < oy1; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* row = cols->data() + (static_cast<size_t>(oy - oy0) * wo + ox) * k_ * k_ * cin_;
      for (int ky = 0; ky < k_; ++ky) {
        int iy = oy * stride_ - pad_ + ky * dilation_;
        for (int kx = 0; kx < k_; ++kx) {
          int ix = ox * stride_ - pad_ + kx * dilation_;
          double* dst = row + (ky * k_ + kx) * cin_;
          if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) {
            std::fill(dst, dst + cin_, 0.0);
          } else {
            const double* src = x.data() +
                (((static_cast<size_t>(n) * x.h() + iy) * x.w() + ix) * cin_);
            std::copy(src, src + cin_, dst);
          }
        }
      }
    }
  }
}

int Conv2d::strip_rows() const {
  // Keep the column buffer within the L2 cache.
  constexpr int kBudget = 1 << 18;  // doubles, i.e. 2 MB
  int per_row = out_w_ * k_ * k_ * cin_;
  int rows = std::max(1, kBudget / std::max(1, per_row));
  return std::min(rows, out_h_);
}

// For stride 1 every kernel tap maps a contiguous pixel span of the input
// onto a contiguous span of the output, so the convolution decomposes into
// k*k small GEMMs on views of the original buffers. This avoids
// materialising the im2col matrix (which dwarfs the L2 cache at 128x128)
// and the scalar col2im scatter in the backward pass.
void Conv2d::tap_ranges(int tap_off, int in_dim, int out_dim,
                        int* o0, int* o1) const {
  *o0 = std::max(0, -tap_off);
  *o1 = std::min(out_dim, in_dim - tap_off);
}

Tensor Conv2d::forward_stride1(const Tensor& x) {
  const int h = x.h(), w = x.w();
  Tensor y(x.n(), out_h_, out_w_, cout_);
  for (int n = 0; n < x.n(); ++n) {
    Eigen::Map<const Matrix> xm(x.data() + static_cast<size_t>(n) * h * w * cin_,
                                static_cast<Eigen::Index>(h) * w, cin_);
    Eigen::Map<Matrix> ym(y.data() + static_cast<size_t>(n) * out_h_ * out_w_ * cout_,
                          static_cast<Eigen::Index>(out_h_) * out_w_, cout_);
    ym.setZero();
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        const int dy = ky * dilation_ - pad_, dx = kx * dilation_ - pad_;
        int oy0, oy1, ox0, ox1;
        tap_ranges(dy, h, out_h_, &oy0, &oy1);
        tap_ranges(dx, w, out_w_, &ox0, &ox1);
        if (oy1 <= oy0 || ox1 <= ox0) continue;
        const auto wtap = weight.middleRows((ky * k_ + kx) * cin_, cin_);
        if (dx == 0 && ox0 == 0 && ox1 == w) {
          // Full-width tap: one GEMM over the whole valid row band.
          ym.middleRows(static_cast<Eigen::Index>(oy0) * w,
                        static_cast<Eigen::Index>(oy1 - oy0) * w)
              .noalias() +=
              xm.middleRows(static_cast<Eigen::Index>(oy0 + dy) * w,
                            static_cast<Eigen::Index>(oy1 - oy0) * w) * wtap;
        } else {
          for (int oy = oy0; oy < oy1; ++oy)
            ym.middleRows(static_cast<Eigen::Index>(oy) * w + ox0, ox1 - ox0)
                .noalias() +=
                xm.middleRows(static_cast<Eigen::Index>(oy + dy) * w + ox0 + dx,
                              ox1 - ox0) * wtap;
        }
      }
    }
    ym.rowwise() += bias.transpose();
  }
  return y;
}

Tensor Conv2d::backward_stride1(const Tensor& grad_out) {
  const Tensor& x = input_;
  const int h = x.h(), w = x.w();
  Tensor dx_t(x.n(), h, w, cin_);
  for (int n = 0; n < x.n(); ++n) {
    Eigen::Map<const Matrix> xm(x.data() + static_cast<size_t>(n) * h * w * cin_,
                                static_cast<Eigen::Index>(h) * w, cin_);
    Eigen::Map<const Matrix> dy_m(
        grad_out.data() + static_cast<size_t>(n) * out_h_ * out_w_ * cout_,
        static_cast<Eigen::Index>(out_h_) * out_w_, cout_);
    Eigen::Map<Matrix> dxm(dx_t.data() + static_cast<size_t>(n) * h * w * cin_,
                           static_cast<Eigen::Index>(h) * w, cin_);
    bias_grad.noalias() += dy_m.colwise().sum().transpose();
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        const int dy = ky * dilation_ - pad_, dx = kx * dilation_ - pad_;
        int oy0, oy1, ox0, ox1;
        tap_ranges(dy, h, out_h_, &oy0, &oy1);
        tap_ranges(dx, w, out_w_, &ox0, &ox1);
        if (oy1 <= oy0 || ox1 <= ox0) continue;
        auto wg = weight_grad.middleRows((ky * k_ + kx) * cin_, cin_);
        const auto wtap = weight.middleRows((ky * k_ + kx) * cin_, cin_);
        if (dx == 0 && ox0 == 0 && ox1 == w) {
          const auto xb = xm.middleRows(static_cast<Eigen::Index>(oy0 + dy) * w,
                                        static_cast<Eigen::Index>(oy1 - oy0) * w);
          const auto gb = dy_m.middleRows(static_cast<Eigen::Index>(oy0) * w,
                                          static_cast<Eigen::Index>(oy1 - oy0) * w);
          wg.noalias() += xb.transpose() * gb;
          dxm.middleRows(static_cast<Eigen::Index>(oy0 + dy) * w,
                         static_cast<Eigen::Index>(oy1 - oy0) * w)
              .noalias() += gb * wtap.transpose();
        } else {
          for (int oy = oy0; oy < oy1; ++oy) {
            const auto xb = xm.middleRows(
                static_cast<Eigen::Index>(oy + dy) * w + ox0 + dx, ox1 - ox0);
            const auto gb = dy_m.middleRows(
                static_cast<Eigen::Index>(oy) * w + ox0, ox1 - ox0);
            wg.noalias() += xb.transpose() * gb;
            dxm.middleRows(static_cast<Eigen::Index>(oy + dy) * w + ox0 + dx,
                           ox1 - ox0)
                .noalias() += gb * wtap.transpose();
          }
        }
      }
    }
  }
  return dx_t;
}

Tensor Conv2d::forward(const Tensor& x, bool) {
  require(x.c() == cin_, "Conv2d: channel mismatch");
  input_ = x;
  out_h_ = (x.h() + 2 * pad_ - dilation_ * (k_ - 1) - 1) / stride_ + 1;
  out_w_ = (x.w() + 2 * pad_ - dilation_ * (k_ - 1) - 1) / stride_ + 1;
  if (stride_ == 1) return forward_stride1(x);
  Tensor y(x.n(), out_h_, out_w_, cout_);
  const int strip = strip_rows();
  Matrix cols;
  for (int n = 0; n < x.n(); ++n) {
    for (int oy0 = 0; oy0 < out_h_; oy0 += strip) {
      const int oy1 = std::min(out_h_, oy0 + strip);
      im2col(x, n, oy0, oy1, &cols);
      Eigen::Map<Matrix> out(
          y.data() + (static_cast<size_t>(n) * out_h_ + oy0) * out_w_ * cout_,
          static_cast<Eigen::Index>(oy1 - oy0) * out_w_, cout_);
      out.noalias() = cols * weight;
      out.rowwise() += bias.transpose();
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (stride_ == 1) return backward_stride1(grad_out);
  const Tensor& x = input_;
  Tensor dx(x.n(), x.h(), x.w(), cin_);
  const int strip = strip_rows();
  Matrix cols, dcols;
  for (int n = 0; n < x.n(); ++n) {
    for (int oy0 = 0; oy0 < out_h_; oy0 += strip) {
    const int oy1 = std::min(out_h_, oy0 + strip);
    Eigen::Map<const Matrix> dy(
        grad_out.data() + (static_cast<size_t>(n) * out_h_ + oy0) * out_w_ * cout_,
        static_cast<Eigen::Index>(oy1 - oy0) * out_w_, cout_);
    im2col(x, n, oy0, oy1, &cols);
    weight_grad.noalias() += cols.transpose() * dy;
    bias_grad.noalias() += dy.colwise().sum().transpose();
    dcols.noalias() = dy * weight.transpose();
    // col2im scatter-add.
    for (int oy = oy0; oy < oy1; ++oy) {
      for (int ox = 0; ox < out_w_; ++ox) {
        const double* row =
            dcols.data() + (static_cast<size_t>(oy - oy0) * out_w_ + ox) * k_ * k_ * cin_;
        for (int ky = 0; ky < k_; ++ky) {
          int iy = oy * stride_ - pad_ + ky * dilation_;
          if (iy < 0 || iy >= x.h()) continue;
          for (int kx = 0; kx < k_; ++kx) {
            int ix = ox * stride_ - pad_ + kx * dilation_;
            if (ix < 0 || ix >= x.w()) continue;
            double* dst = dx.data() + (((static_cast<size_t>(n) * x.h() + iy) * x.w() + ix) * cin_);
            const double* src = row + (ky * k_ + kx) * cin_;
            for (int ci = 0; ci < cin_; ++ci) dst[ci] += src[ci];
          }
        }
      }
    }
    }
  }
  return dx;
}

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps)
    : c_(channels), momentum_(momentum), eps_(eps) {
  gamma = Vector::Ones(c_);
  beta = Vector::Zero(c_);
  gamma_grad = Vector::Zero(c_);
  beta_grad = Vector::Zero(c_);
  running_mean = Vector::Zero(c_);
  running_var = Vector::Ones(c_);
}

void BatchNorm2d::init(Rng&) {
  gamma.setOnes();
  beta.setZero();
  running_mean.setZero();
  running_var.setOnes();
}

void BatchNorm2d::collect_params(const std::string& prefix, std::vector<ParamView>* out) {
  out->push_back({prefix + ".gamma", gamma.data(), gamma_grad.data(), static_cast<size_t>(c_)});
  out->push_back({prefix + ".beta", beta.data(), beta_grad.data(), static_cast<size_t>(c_)});
  // Running stats ride along as non-trainable state with null grads.
  out->push_back({prefix + ".running_mean", running_mean.data(), nullptr, static_cast<size_t>(c_)});
  out->push_back({prefix + ".running_var", running_var.data(), nullptr, static_cast<size_t>(c_)});
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  require(x.c() == c_, "BatchNorm2d: channel mismatch");
  count_ = x.n() * x.h() * x.w();
  Vector mean(c_), var(c_);
  if (training) {
    mean.setZero();
    var.setZero();
    for (size_t i = 0; i < x.size(); i += c_)
      for (int ch = 0; ch < c_; ++ch) mean[ch] += x[i + ch];
    mean /= count_;
    for (size_t i = 0; i < x.size(); i += c_)
      for (int ch = 0; ch < c_; ++ch) {
        double d = x[i + ch] - mean[ch];
        var[ch] += d * d;
      }
    var /= count_;
    running_mean = (1.0 - momentum_) * running_mean + momentum_ * mean;
    running_var = (1.0 - momentum_) * running_var + momentum_ * var;
  } else {
    mean = running_mean;
    var = running_var;
  }
  inv_std_ = (var.array() + eps_).rsqrt();
  xhat_ = Tensor(x.n(), x.h(), x.w(), c_);
  Tensor y(x.n(), x.h(), x.w(), c_);
  for (size_t i = 0; i < x.size(); i += c_)
    for (int ch = 0; ch < c_; ++ch) {
      double xh = (x[i + ch] - mean[ch]) * inv_std_[ch];
      xhat_[i + ch] = xh;
      y[i + ch] = gamma[ch] * xh + beta[ch];
    }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  const Tensor& xh = xhat_;
  Vector dgamma = Vector::Zero(c_), dbeta = Vector::Zero(c_);
  for (size_t i = 0; i < xh.size(); i += c_)
    for (int ch = 0; ch < c_; ++ch) {
      dgamma[ch] += grad_out[i + ch] * xh[i + ch];
      dbeta[ch] += grad_out[i + ch];
    }
  gamma_grad += dgamma;
  beta_grad += dbeta;
  Tensor dx(xh.n(), xh.h(), xh.w(), c_);
  const double inv_count = 1.0 / count_;
  for (size_t i = 0; i < xh.size(); i += c_)
    for (int ch = 0; ch < c_; ++ch) {
      double dxhat = grad_out[i + ch] * gamma[ch];
      dx[i + ch] = inv_std_[ch] *
          (dxhat - inv_count * dbeta[ch] * gamma[ch] - inv_count * xh[i + ch] * dgamma[ch] * gamma[ch]);
    }
  return dx;
}

Tensor ReLU::forward(const Tensor& x, bool) {
  input_ = x;
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0.0) y[i] = 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (size_t i = 0; i < dx.size(); ++i)
    if (input_[i] <= 0.0) dx[i] = 0.0;
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x, bool) {
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
  output_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (size_t i = 0; i < dx.size(); ++i) dx[i] *= output_[i] * (1.0 - output_[i]);
  return dx;
}

AvgPool2d::AvgPool2d(int kernel) : k_(kernel) {}

Tensor AvgPool2d::forward(const Tensor& x, bool) {
  require(x.h() % k_ == 0 && x.w() % k_ == 0, "AvgPool2d: size not divisible by kernel");
  n_ = x.n();
  c_ = x.c();
  in_h_ = x.h();
  in_w_ = x.w();
  const int ho = x.h() / k_, wo = x.w() / k_;
  Tensor y(x.n(), ho, wo, x.c());
  const double inv = 1.0 / (k_ * k_);
  for (int n = 0; n < x.n(); ++n)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int ch = 0; ch < x.c(); ++ch) {
          double acc = 0.0;
          for (int ky = 0; ky < k_; ++ky)
            for (int kx = 0; kx < k_; ++kx)
              acc += x.at(n, oy * k_ + ky, ox * k_ + kx, ch);
          y.at(n, oy, ox, ch) = acc * inv;
        }
  return y;
}

Tensor AvgPool2d::backward(const Tensor& grad_out) {
  Tensor dx(n_, in_h_, in_w_, c_);
  const double inv = 1.0 / (k_ * k_);
  for (int n = 0; n < n_; ++n)
    for (int oy = 0; oy < grad_out.h(); ++oy)
      for (int ox = 0; ox < grad_out.w(); ++ox)
        for (int ch = 0; ch < c_; ++ch) {
          double g = grad_out.at(n, oy, ox, ch) * inv;
          for (int ky = 0; ky < k_; ++ky)
            for (int kx = 0; kx < k_; ++kx)
              dx.at(n, oy * k_ + ky, ox * k_ + kx, ch) = g;
        }
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  n_ = x.n();
  c_ = x.c();
  in_h_ = x.h();
  in_w_ = x.w();
  Tensor y(x.n(), 1, 1, x.c());
  const double inv = 1.0 / (static_cast<double>(x.h()) * x.w());
  for (int n = 0; n < x.n(); ++n)
    for (int y0 = 0; y0 < x.h(); ++y0)
      for (int x0 = 0; x0 < x.w(); ++x0)
        for (int ch = 0; ch < x.c(); ++ch) y.at(n, 0, 0, ch) += x.at(n, y0, x0, ch) * inv;
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(n_, in_h_, in_w_, c_);
  const double inv = 1.0 / (static_cast<double>(in_h_) * in_w_);
  for (int n = 0; n < n_; ++n)
    for (int y0 = 0; y0 < in_h_; ++y0)
      for (int x0 = 0; x0 < in_w_; ++x0)
        for (int ch = 0; ch < c_; ++ch) dx.at(n, y0, x0, ch) = grad_out.at(n, 0, 0, ch) * inv;
  return dx;
}

Tensor UpsampleNearest2x::forward(const Tensor& x, bool) {
  n_ = x.n();
  c_ = x.c();
  in_h_ = x.h();
  in_w_ = x.w();
  Tensor y(x.n(), x.h() * 2, x.w() * 2, x.c());
  for (int n = 0; n < x.n(); ++n)
    for (int y0 = 0; y0 < y.h(); ++y0)
      for (int x0 = 0; x0 < y.w(); ++x0)
        for (int ch = 0; ch < x.c(); ++ch)
          y.at(n, y0, x0, ch) = x.at(n, y0 / 2, x0 / 2, ch);
  return y;
}

Tensor UpsampleNearest2x::backward(const Tensor& grad_out) {
  Tensor dx(n_, in_h_, in_w_, c_);
  for (int n = 0; n < n_; ++n)
    for (int y0 = 0; y0 < grad_out.h(); ++y0)
      for (int x0 = 0; x0 < grad_out.w(); ++x0)
        for (int ch = 0; ch < c_; ++ch)
          dx.at(n, y0 / 2, x0 / 2, ch) += grad_out.at(n, y0, x0, ch);
  return dx;
}

Linear::Linear(int in, int out) {
  weight = Matrix::Zero(in, out);
  bias = Vector::Zero(out);
  weight_grad = Matrix::Zero(in, out);
  bias_grad = Vector::Zero(out);
}

void Linear::init(Rng& rng) {
  double stddev = std::sqrt(2.0 / weight.rows());
  for (int i = 0; i < weight.rows(); ++i)
    for (int j = 0; j < weight.cols(); ++j) weight(i, j) = rng.normal(0.0, stddev);
  bias.setZero();
}

void Linear::collect_params(const std::string& prefix, std::vector<ParamView>* out) {
  out->push_back({prefix + ".weight", weight.data(), weight_grad.data(),
                  static_cast<size_t>(weight.size())});
  out->push_back({prefix + ".bias", bias.data(), bias_grad.data(),
                  static_cast<size_t>(bias.size())});
}

Matrix Linear::forward(const Matrix& x) {
  require(x.cols() == weight.rows(), "Linear: input dim mismatch");
  input_ = x;
  Matrix y = x * weight;
  y.rowwise() += bias.transpose();
  return y;
}

Matrix Linear::backward(const Matrix& grad_out) {
  weight_grad.noalias() += input_.transpose() * grad_out;
  bias_grad.noalias() += grad_out.colwise().sum().transpose();
  return grad_out * weight.transpose();
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (int k = 0; k < logits.rows(); ++k) {
    Eigen::RowVectorXd e = (logits.row(k).array() - logits.row(k).maxCoeff()).exp();
    probs.row(k) = e / e.sum();
  }
  return probs;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
  Matrix dlogits(probs.rows(), probs.cols());
  for (int k = 0; k < probs.rows(); ++k) {
    double dot = probs.row(k).cwiseProduct(grad_probs.row(k)).sum();
    dlogits.row(k) = (probs.row(k).array() * (grad_probs.row(k).array() - dot)).matrix();
  }
  return dlogits;
}

Tensor Sequential::forward(const Tensor& x, bool training) {
  Tensor y = x;
  for (auto& layer : layers_) y = layer->forward(y, training);
  return y;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect_params(const std::string& prefix, std::vector<ParamView>* out) {
  for (size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->collect_params(prefix + "." + std::to_string(i), out);
}

void Sequential::init(Rng& rng) {
  for (auto& layer : layers_) layer->init(rng);
}

}  // namespace feratt::nn
