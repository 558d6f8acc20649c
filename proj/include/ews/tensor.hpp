#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace ews {

// Dense row-major float tensor. Activations are NCHW, conv weights OIHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) { reshape(std::move(shape)); }

  void reshape(std::vector<int> shape) {
    shape_ = std::move(shape);
    std::size_t n = 1;
    for (int d : shape_) {
      assert(d >= 0);
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, 0.0f);
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessors for 4-d tensors.
  float& at(int n, int c, int h, int w) {
    return data_[idx(n, c, h, w)];
  }
  const float& at(int n, int c, int h, int w) const {
    return data_[idx(n, c, h, w)];
  }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0f); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::size_t idx(int n, int c, int h, int w) const {
    assert(ndim() == 4);
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
               shape_[3] +
           w;
  }

  std::vector<int> shape_;
  std::vector<float> data_;
};

inline void axpy(float a, const Tensor& x, Tensor& y) {
  assert(x.size() == y.size());
  const float* xs = x.data();
  float* ys = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) ys[i] += a * xs[i];
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  assert(a.size() == b.size());
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    float d = a[i] - b[i];
    if (d < 0) d = -d;
    if (d > m) m = d;
  }
  return m;
}

}  // namespace ews
