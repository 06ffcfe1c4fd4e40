// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xaiens/tensor.hpp"

namespace xaiens::nn {

// Minimal tape autograd over Tensor. Each forward op appends a node holding
// the value and a closure that routes the node's gradient to its inputs.
// Graphs are rebuilt per forward call and freed when the last Var handle
// goes out of scope.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_init = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_op;

  Tensor& ensure_grad() {
    if (!grad_init) {
      grad = Tensor(value.dims());
      grad_init = true;
    }
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node != nullptr; }
  Tensor& value() { return node->value; }
  const Tensor& value() const { return node->value; }
  Tensor& grad() { return node->ensure_grad(); }
  bool requires_grad() const { return node && node->requires_grad; }

  std::shared_ptr<Node> node;
};

/// Backpropagates from a scalar root (size-1 tensor), seeding d(root)=1.
void backward(const Var& root);

// ---- elementwise / structural ops ----
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var relu(const Var& x, bool guided_backward = false);
Var sigmoid(const Var& x);
Var concat_channels(const std::vector<Var>& xs);
Var flatten2(const Var& x);          // [N, ...] -> [N, F]
Var global_avg_pool(const Var& x);   // [N, C, H, W] -> [N, C]

// ---- layers ----
Var linear(const Var& x, const Var& w, const Var& b);  // x [N,F], w [O,F], b [O]
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
           int dilation = 1);
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride,
                     int pad, int out_pad);
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta,
                 Tensor* running_mean, Tensor* running_var, bool training,
                 float momentum = 0.1f, float eps = 1e-5f);
Var maxpool2d(const Var& x, int k, int stride, int pad);
Var upsample_bilinear(const Var& x, int out_h, int out_w);

// ---- reductions / losses ----
Var sum_all(const Var& x);
/// Sum of one column over the batch: sum_n x[n, col]. x is [N, C].
Var column_sum(const Var& x, int col);
/// Mean softmax cross-entropy over the batch. logits [N, C].
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);
/// Mean soft dice loss over the batch. pred and target are [N, 1, H, W];
/// target entries in {0,1}.
Var soft_dice(const Var& pred, const Tensor& target, float smooth);

// ---- parameter handling ----
struct Param {
  std::string name;
  Var var;
};

void init_conv_weight(Tensor& w, Rng& rng);    // He normal, fan_in = Cin*k*k
void init_linear_weight(Tensor& w, Rng& rng);  // He normal, fan_in = F

class Adam {
 public:
  Adam(std::vector<Param> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Param> params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// ---- module building blocks ----
struct Conv2d {
  Var weight, bias;
  int stride = 1, pad = 0, dilation = 1;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng,
         int dilation = 1);
  Var operator()(const Var& x) const {
    return conv2d(x, weight, bias, stride, pad, dilation);
  }
  void collect(const std::string& prefix, std::vector<Param>& out);
};

struct ConvTranspose2d {
  Var weight, bias;  // weight [Cin, Cout, k, k]
  int stride = 2, pad = 1, out_pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in_ch, int out_ch, int k, int stride, int pad,
                  int out_pad, Rng& rng);
  Var operator()(const Var& x) const {
    return conv_transpose2d(x, weight, bias, stride, pad, out_pad);
  }
  void collect(const std::string& prefix, std::vector<Param>& out);
};

struct BatchNorm2d {
  Var gamma, beta;
  Tensor running_mean, running_var;
  float momentum = 0.1f, eps = 1e-5f;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int ch);
  Var operator()(const Var& x, bool training) {
    return batch_norm2d(x, gamma, beta, &running_mean, &running_var, training,
                        momentum, eps);
  }
  void collect(const std::string& prefix, std::vector<Param>& out);
  // Running stats travel with checkpoints even though they are not trained.
  void collect_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor*>>& out);
};

struct Linear {
  Var weight, bias;

  Linear() = default;
  Linear(int in_f, int out_f, Rng& rng);
  Var operator()(const Var& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, std::vector<Param>& out);
};

/// Counts scalar entries across a parameter list.
size_t count_scalars(const std::vector<Param>& params);

}  // namespace xaiens::nn
