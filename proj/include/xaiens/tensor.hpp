// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "xaiens/common.hpp"

namespace xaiens {

// Dense row-major float tensor. Convolutional data uses NCHW order; the
// class itself is layout-agnostic beyond row-major strides.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims, float fill = 0.f);
  static Tensor from(std::vector<int> dims, std::vector<float> values);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }

  int ndim() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_[static_cast<size_t>(i)]; }
  const std::vector<int>& dims() const { return dims_; }
  size_t size() const { return data_.size(); }
  bool defined() const { return !dims_.empty(); }
  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float operator[](size_t i) const { return data_[i]; }
  float& operator[](size_t i) { return data_[i]; }

  // NCHW accessors.
  float& at(int n, int c, int h, int w) {
    return data_[((static_cast<size_t>(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }
  float at(int n, int c, int h, int w) const {
    return data_[((static_cast<size_t>(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }
  float& at(int c, int h, int w) {
    return data_[(static_cast<size_t>(c) * dims_[1] + h) * dims_[2] + w];
  }
  float at(int c, int h, int w) const {
    return data_[(static_cast<size_t>(c) * dims_[1] + h) * dims_[2] + w];
  }
  float& at(int h, int w) { return data_[static_cast<size_t>(h) * dims_[1] + w]; }
  float at(int h, int w) const { return data_[static_cast<size_t>(h) * dims_[1] + w]; }

  void fill(float v);
  bool all_finite() const;
  double sum() const;  // double accumulation
  float min_value() const;
  float max_value() const;
  float abs_max() const;

 private:
  std::vector<int> dims_;
  std::vector<float> data_;
};

/// Flat L2 norm with double accumulation.
double l2_norm(const Tensor& t);
/// Flat L2 norm of (a - b) with double accumulation.
double l2_distance(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace xaiens
