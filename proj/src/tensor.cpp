// SPDX-License-Identifier: Apache-2.0
#include "xaiens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace xaiens {

Tensor::Tensor(std::vector<int> dims, float fill) : dims_(std::move(dims)) {
  size_t n = 1;
  for (int d : dims_) {
    require(d > 0, ErrorCode::invalid_argument, "tensor dims must be positive");
    n *= static_cast<size_t>(d);
  }
  data_.assign(n, fill);
}

Tensor Tensor::from(std::vector<int> dims, std::vector<float> values) {
  Tensor t;
  size_t n = 1;
  for (int d : dims) {
    require(d > 0, ErrorCode::invalid_argument, "tensor dims must be positive");
    n *= static_cast<size_t>(d);
  }
  require(n == values.size(), ErrorCode::invalid_argument,
          "tensor data size does not match dims");
  t.dims_ = std::move(dims);
  t.data_ = std::move(values);
  return t;
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::sum() const {
  double s = 0.0;
  for (float v : data_) s += v;
  return s;
}

float Tensor::min_value() const {
  return *std::min_element(data_.begin(), data_.end());
}

float Tensor::max_value() const {
  return *std::max_element(data_.begin(), data_.end());
}

float Tensor::abs_max() const {
  float m = 0.f;
  for (float v : data_) m = std::max(m, std::fabs(v));
  return m;
}

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (float v : t.vec()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

double l2_distance(const Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), ErrorCode::invalid_argument,
          "l2_distance: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace xaiens
