#pragma once

#include <cassert>
#include <cstdint>
#include <string>
#include <vector>

namespace usnas::nn {

// Dense double-precision tensor, row-major. Rank and shape are dynamic;
// CNN activations use NCHW order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
    long n = 1;
    for (long d : shape_) {
      assert(d >= 0);
      n *= d;
    }
    data_.assign(static_cast<size_t>(n), 0.0);
  }

  static Tensor scalar(double v) {
    Tensor t(std::vector<long>{1});
    t.data_[0] = v;
    return t;
  }

  long numel() const { return static_cast<long>(data_.size()); }
  int rank() const { return static_cast<int>(shape_.size()); }
  long dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<long>& shape() const { return shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  double operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  void fill(double v) { data_.assign(data_.size(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  std::vector<long> shape_;
  std::vector<double> data_;
};

// A trainable weight container. Gradients accumulate across backward passes
// until an optimizer consumes and clears them.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  long numel() const { return value.numel(); }
  void zero_grad() { grad.zero(); }
};

}  // namespace usnas::nn
