#pragma once

#include <algorithm>
#include <cassert>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "occlm/common.hpp"

namespace occlm {

// Dense row-major tensor, up to 4 dims. All network math runs on these.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), 0.0);
  }
  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::runtime_error("tensor: negative dimension");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  size_t numel() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](size_t i) { return data_[i]; }
  Scalar operator[](size_t i) const { return data_[i]; }

  Scalar& at(int a) { return data_[static_cast<size_t>(a)]; }
  Scalar& at(int a, int b) { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
  Scalar& at(int a, int b, int c) {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  Scalar& at(int a, int b, int c, int d) {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  Scalar at(int a) const { return data_[static_cast<size_t>(a)]; }
  Scalar at(int a, int b) const { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
  Scalar at(int a, int b, int c) const {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  Scalar at(int a, int b, int c, int d) const {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  void zero() { std::fill(data_.begin(), data_.end(), 0.0); }
  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void add_(const Tensor& o) {
    assert(same_shape(o));
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  }
  void axpy_(Scalar a, const Tensor& o) {
    assert(same_shape(o));
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += a * o.data_[i];
  }
  void scale_(Scalar a) {
    for (auto& v : data_) v *= a;
  }

  Scalar sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  bool all_finite() const {
    for (Scalar v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::vector<int> shape_;
  std::vector<Scalar> data_;
};

inline void check_shape(const Tensor& t, const std::vector<int>& want, const char* what) {
  if (t.shape() != want) throw std::runtime_error(std::string("shape mismatch: ") + what);
}

}  // namespace occlm
