#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace feratt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Dense 4-d tensor in NHWC layout (channel fastest). Images use n=1.
class Tensor {
 public:
  Tensor() : n_(0), h_(0), w_(0), c_(0) {}
  Tensor(int n, int h, int w, int c, double fill = 0.0)
      : n_(n), h_(h), w_(w), c_(c),
        data_(static_cast<size_t>(n) * h * w * c, fill) {
    if (n < 0 || h < 0 || w < 0 || c < 0)
      throw std::invalid_argument("Tensor: negative dimension");
  }

  int n() const { return n_; }
  int h() const { return h_; }
  int w() const { return w_; }
  int c() const { return c_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& at(int n, int y, int x, int ch) {
    return data_[idx(n, y, x, ch)];
  }
  double at(int n, int y, int x, int ch) const {
    return data_[idx(n, y, x, ch)];
  }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }

  // View of sample n as a (h*w) x c row-major matrix.
  Eigen::Map<Matrix> sample(int n) {
    return Eigen::Map<Matrix>(data_.data() + static_cast<size_t>(n) * h_ * w_ * c_,
                              static_cast<Eigen::Index>(h_) * w_, c_);
  }
  Eigen::Map<const Matrix> sample(int n) const {
    return Eigen::Map<const Matrix>(data_.data() + static_cast<size_t>(n) * h_ * w_ * c_,
                                    static_cast<Eigen::Index>(h_) * w_, c_);
  }

  Eigen::Map<Eigen::VectorXd> flat() {
    return Eigen::Map<Eigen::VectorXd>(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }
  Eigen::Map<const Eigen::VectorXd> flat() const {
    return Eigen::Map<const Eigen::VectorXd>(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void clamp(double lo, double hi) {
    for (double& v : data_) v = v < lo ? lo : (v > hi ? hi : v);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  size_t idx(int n, int y, int x, int ch) const {
    return ((static_cast<size_t>(n) * h_ + y) * w_ + x) * c_ + ch;
  }
  int n_, h_, w_, c_;
  std::vector<double> data_;
};

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace feratt
