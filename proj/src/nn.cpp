// SPDX-License-Identifier: Apache-2.0
#include "xaiens/nn.hpp"

#include <omp.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>

namespace xaiens::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<RowMat> mmap(float* p, int rows, int cols) {
  return Eigen::Map<RowMat>(p, rows, cols);
}
inline Eigen::Map<const RowMat> cmap(const float* p, int rows, int cols) {
  return Eigen::Map<const RowMat>(p, rows, cols);
}

std::shared_ptr<Node> make_node(Tensor value, std::vector<std::shared_ptr<Node>> inputs,
                                std::function<void(Node&)> backward_op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs) {
    if (in->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backward_op = std::move(backward_op);
  return n;
}

Var wrap(std::shared_ptr<Node> n) {
  Var v;
  v.node = std::move(n);
  return v;
}

inline int conv_out_size(int in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

// col is K x (Ho*Wo) with K = Cin*k*k; row index = (ci*k + u)*k + v.
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad,
            int dilation, int Ho, int Wo, float* col) {
  const int spatial = Ho * Wo;
  for (int ci = 0; ci < C; ++ci) {
    const float* xc = x + static_cast<size_t>(ci) * H * W;
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) {
        float* row = col + (static_cast<size_t>(ci) * k * k + u * k + v) * spatial;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + u * dilation;
          float* dst = row + static_cast<size_t>(oh) * Wo;
          if (ih < 0 || ih >= H) {
            std::memset(dst, 0, sizeof(float) * Wo);
            continue;
          }
          const float* src = xc + static_cast<size_t>(ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + v * dilation;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.f;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col entries back into the input layout.
void col2im(const float* col, int C, int H, int W, int k, int stride, int pad,
            int dilation, int Ho, int Wo, float* x) {
  const int spatial = Ho * Wo;
  for (int ci = 0; ci < C; ++ci) {
    float* xc = x + static_cast<size_t>(ci) * H * W;
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) {
        const float* row = col + (static_cast<size_t>(ci) * k * k + u * k + v) * spatial;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + u * dilation;
          if (ih < 0 || ih >= H) continue;
          float* dst = xc + static_cast<size_t>(ih) * W;
          const float* src = row + static_cast<size_t>(oh) * Wo;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + v * dilation;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

thread_local std::vector<float> tl_col;

}  // namespace

Var::Var(Tensor value, bool requires_grad) {
  node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
}

void backward(const Var& root) {
  require(root.defined(), ErrorCode::invalid_argument, "backward: undefined var");
  require(root.node->value.size() == 1, ErrorCode::invalid_argument,
          "backward: root must be scalar");

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node.get(), 0);
  visited.insert(root.node.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->inputs.size()) {
      Node* child = n->inputs[idx++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node->ensure_grad()[0] = 1.f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_op && n->requires_grad) {
      n->ensure_grad();
      n->backward_op(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise / structural
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), ErrorCode::invalid_argument,
          "add: shape mismatch");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return wrap(make_node(std::move(out), {a.node, b.node}, [](Node& n) {
    for (int s = 0; s < 2; ++s) {
      auto& in = n.inputs[s];
      if (!in->requires_grad) continue;
      Tensor& g = in->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }));
}

Var mul(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), ErrorCode::invalid_argument,
          "mul: shape mismatch");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return wrap(make_node(std::move(out), {a.node, b.node}, [](Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv2 = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      Tensor& ga = n.inputs[0]->ensure_grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * bv2[i];
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& gb = n.inputs[1]->ensure_grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * av[i];
    }
  }));
}

Var scale(const Var& a, float s) {
  Tensor out = a.value();
  for (auto& v : out.vec()) v *= s;
  return wrap(make_node(std::move(out), {a.node}, [s](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor& g = n.inputs[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
  }));
}

Var relu(const Var& x, bool guided_backward) {
  Tensor out = x.value();
  for (auto& v : out.vec()) v = v > 0.f ? v : 0.f;
  return wrap(make_node(std::move(out), {x.node}, [guided_backward](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    const Tensor& xv = n.inputs[0]->value;
    Tensor& g = n.inputs[0]->ensure_grad();
    if (guided_backward) {
      // Guided backprop rule: pass only positive gradients through
      // positively activated units.
      for (size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.f && n.grad[i] > 0.f) g[i] += n.grad[i];
    } else {
      for (size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.f) g[i] += n.grad[i];
    }
  }));
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.vec()) v = 1.f / (1.f + std::exp(-v));
  auto node = make_node(std::move(out), {x.node}, [](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor& g = n.inputs[0]->ensure_grad();
    const Tensor& y = n.value;
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * y[i] * (1.f - y[i]);
  });
  return wrap(std::move(node));
}

Var concat_channels(const std::vector<Var>& xs) {
  require(!xs.empty(), ErrorCode::invalid_argument, "concat: empty input list");
  const int N = xs[0].value().dim(0);
  const int H = xs[0].value().dim(2);
  const int W = xs[0].value().dim(3);
  int C = 0;
  for (const auto& x : xs) {
    require(x.value().ndim() == 4 && x.value().dim(0) == N &&
                x.value().dim(2) == H && x.value().dim(3) == W,
            ErrorCode::invalid_argument, "concat: incompatible shapes");
    C += x.value().dim(1);
  }
  Tensor out({N, C, H, W});
  const size_t plane = static_cast<size_t>(H) * W;
  size_t c_off = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& x : xs) {
    const int ci = x.value().dim(1);
    for (int n = 0; n < N; ++n) {
      std::memcpy(out.data() + ((static_cast<size_t>(n) * C) + c_off) * plane,
                  x.value().data() + static_cast<size_t>(n) * ci * plane,
                  sizeof(float) * ci * plane);
    }
    c_off += ci;
    inputs.push_back(x.node);
  }
  return wrap(make_node(std::move(out), std::move(inputs), [N, C, plane](Node& n) {
    size_t off = 0;
    for (auto& in : n.inputs) {
      const int ci = in->value.dim(1);
      if (in->requires_grad) {
        Tensor& g = in->ensure_grad();
        for (int b = 0; b < N; ++b) {
          const float* src = n.grad.data() + ((static_cast<size_t>(b) * C) + off) * plane;
          float* dst = g.data() + static_cast<size_t>(b) * ci * plane;
          for (size_t i = 0; i < ci * plane; ++i) dst[i] += src[i];
        }
      }
      off += ci;
    }
  }));
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x.value();
  require(xv.ndim() == 4, ErrorCode::invalid_argument, "gap: 4-d input");
  const int N = xv.dim(0), C = xv.dim(1);
  const size_t plane = static_cast<size_t>(xv.dim(2)) * xv.dim(3);
  Tensor out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = xv.data() + (static_cast<size_t>(n) * C + c) * plane;
      double s = 0.0;
      for (size_t i = 0; i < plane; ++i) s += p[i];
      out.at(n, c) = static_cast<float>(s / static_cast<double>(plane));
    }
  return wrap(make_node(std::move(out), {x.node}, [N, C, plane](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    Tensor& g = nd.inputs[0]->ensure_grad();
    const float inv = 1.f / static_cast<float>(plane);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const float gv = nd.grad.at(n, c) * inv;
        float* gp = g.data() + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) gp[i] += gv;
      }
  }));
}

Var flatten2(const Var& x) {
  const Tensor& xv = x.value();
  const int N = xv.dim(0);
  const int F = static_cast<int>(xv.size()) / N;
  Tensor out = Tensor::from({N, F}, xv.vec());
  return wrap(make_node(std::move(out), {x.node}, [](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor& g = n.inputs[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  }));
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.ndim() == 2 && wv.ndim() == 2 && xv.dim(1) == wv.dim(1),
          ErrorCode::invalid_argument, "linear: shape mismatch");
  const int N = xv.dim(0), F = xv.dim(1), O = wv.dim(0);
  Tensor out({N, O});
  mmap(out.data(), N, O).noalias() =
      cmap(xv.data(), N, F) * cmap(wv.data(), O, F).transpose();
  const Tensor& bv = b.value();
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) out.at(n, o) += bv[o];
  return wrap(make_node(std::move(out), {x.node, w.node, b.node},
                        [N, F, O](Node& nd) {
    const Tensor& xv2 = nd.inputs[0]->value;
    const Tensor& wv2 = nd.inputs[1]->value;
    if (nd.inputs[0]->requires_grad) {
      Tensor& gx = nd.inputs[0]->ensure_grad();
      mmap(gx.data(), N, F).noalias() +=
          cmap(nd.grad.data(), N, O) * cmap(wv2.data(), O, F);
    }
    if (nd.inputs[1]->requires_grad) {
      Tensor& gw = nd.inputs[1]->ensure_grad();
      mmap(gw.data(), O, F).noalias() +=
          cmap(nd.grad.data(), N, O).transpose() * cmap(xv2.data(), N, F);
    }
    if (nd.inputs[2]->requires_grad) {
      Tensor& gb = nd.inputs[2]->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) gb[o] += nd.grad.at(n, o);
    }
  }));
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
           int dilation) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.ndim() == 4 && wv.ndim() == 4, ErrorCode::invalid_argument,
          "conv2d: expected 4-d input and weight");
  require(xv.dim(1) == wv.dim(1), ErrorCode::invalid_argument,
          "conv2d: channel mismatch");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Cout = wv.dim(0), k = wv.dim(2);
  const int Ho = conv_out_size(H, k, stride, pad, dilation);
  const int Wo = conv_out_size(W, k, stride, pad, dilation);
  require(Ho > 0 && Wo > 0, ErrorCode::invalid_argument, "conv2d: empty output");
  const int K = C * k * k;
  const int spatial = Ho * Wo;

  Tensor out({N, Cout, Ho, Wo});
  const float* bias = b.value().data();
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    tl_col.resize(static_cast<size_t>(K) * spatial);
    im2col(xv.data() + static_cast<size_t>(n) * C * H * W, C, H, W, k, stride,
           pad, dilation, Ho, Wo, tl_col.data());
    auto out_n = mmap(out.data() + static_cast<size_t>(n) * Cout * spatial,
                      Cout, spatial);
    out_n.noalias() = cmap(wv.data(), Cout, K) * cmap(tl_col.data(), K, spatial);
    for (int co = 0; co < Cout; ++co) out_n.row(co).array() += bias[co];
  }

  auto bwd = [N, C, H, W, Cout, k, stride, pad, dilation, Ho, Wo, K,
              spatial](Node& nd) {
    const Tensor& xv2 = nd.inputs[0]->value;
    const Tensor& wv2 = nd.inputs[1]->value;
    const bool need_gx = nd.inputs[0]->requires_grad;
    const bool need_gw = nd.inputs[1]->requires_grad;
    const bool need_gb = nd.inputs[2]->requires_grad;

    float* gx = need_gx ? nd.inputs[0]->ensure_grad().data() : nullptr;
    const int nt = omp_get_max_threads();
    std::vector<std::vector<float>> gw_partial;
    if (need_gw) gw_partial.assign(nt, {});

#pragma omp parallel num_threads(nt)
    {
      const int tid = omp_get_thread_num();
      std::vector<float>* gw_mine = nullptr;
      if (need_gw) {
        gw_partial[tid].assign(static_cast<size_t>(Cout) * K, 0.f);
        gw_mine = &gw_partial[tid];
      }
      std::vector<float> colgrad;
#pragma omp for schedule(static)
      for (int n = 0; n < N; ++n) {
        auto gout_n = cmap(nd.grad.data() + static_cast<size_t>(n) * Cout * spatial,
                           Cout, spatial);
        if (need_gw) {
          tl_col.resize(static_cast<size_t>(K) * spatial);
          im2col(xv2.data() + static_cast<size_t>(n) * C * H * W, C, H, W, k,
                 stride, pad, dilation, Ho, Wo, tl_col.data());
          mmap(gw_mine->data(), Cout, K).noalias() +=
              gout_n * cmap(tl_col.data(), K, spatial).transpose();
        }
        if (need_gx) {
          colgrad.resize(static_cast<size_t>(K) * spatial);
          mmap(colgrad.data(), K, spatial).noalias() =
              cmap(wv2.data(), Cout, K).transpose() * gout_n;
          col2im(colgrad.data(), C, H, W, k, stride, pad, dilation, Ho, Wo,
                 gx + static_cast<size_t>(n) * C * H * W);
        }
      }
    }
    if (need_gw) {
      Tensor& gw = nd.inputs[1]->ensure_grad();
      for (int t = 0; t < nt; ++t) {
        if (gw_partial[t].empty()) continue;
        for (size_t i = 0; i < gw.size(); ++i) gw[i] += gw_partial[t][i];
      }
    }
    if (need_gb) {
      Tensor& gb = nd.inputs[2]->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const float* g = nd.grad.data() + static_cast<size_t>(n) * Cout * spatial;
        for (int co = 0; co < Cout; ++co) {
          double s = 0.0;
          const float* row = g + static_cast<size_t>(co) * spatial;
          for (int i = 0; i < spatial; ++i) s += row[i];
          gb[co] += static_cast<float>(s);
        }
      }
    }
  };
  return wrap(make_node(std::move(out), {x.node, w.node, b.node}, std::move(bwd)));
}

// ---------------------------------------------------------------------------
// conv_transpose2d — weight [Cin, Cout, k, k]
// ---------------------------------------------------------------------------

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride,
                     int pad, int out_pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.ndim() == 4 && wv.ndim() == 4 && xv.dim(1) == wv.dim(0),
          ErrorCode::invalid_argument, "conv_transpose2d: shape mismatch");
  const int N = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Cout = wv.dim(1), k = wv.dim(2);
  const int Ho = (H - 1) * stride - 2 * pad + k + out_pad;
  const int Wo = (W - 1) * stride - 2 * pad + k + out_pad;
  require(Ho > 0 && Wo > 0, ErrorCode::invalid_argument,
          "conv_transpose2d: empty output");

  Tensor out({N, Cout, Ho, Wo});
  const float* bias = b.value().data();
  // Gather formulation keeps writes disjoint per (n, co) slice.
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      float* o = out.data() + (static_cast<size_t>(n) * Cout + co) * Ho * Wo;
      for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow) {
          float acc = bias[co];
          for (int u = 0; u < k; ++u) {
            const int ihs = oh + pad - u;
            if (ihs % stride != 0) continue;
            const int ih = ihs / stride;
            if (ih < 0 || ih >= H) continue;
            for (int v = 0; v < k; ++v) {
              const int iws = ow + pad - v;
              if (iws % stride != 0) continue;
              const int iw = iws / stride;
              if (iw < 0 || iw >= W) continue;
              for (int ci = 0; ci < Cin; ++ci) {
                acc += xv.at(n, ci, ih, iw) *
                       wv.at(ci, co, u, v);
              }
            }
          }
          o[static_cast<size_t>(oh) * Wo + ow] = acc;
        }
      }
    }
  }

  auto bwd = [N, Cin, H, W, Cout, k, stride, pad, Ho, Wo](Node& nd) {
    const Tensor& xv2 = nd.inputs[0]->value;
    const Tensor& wv2 = nd.inputs[1]->value;
    if (nd.inputs[0]->requires_grad) {
      Tensor& gx = nd.inputs[0]->ensure_grad();
#pragma omp parallel for collapse(2) schedule(static)
      for (int n = 0; n < N; ++n) {
        for (int ci = 0; ci < Cin; ++ci) {
          for (int ih = 0; ih < H; ++ih) {
            for (int iw = 0; iw < W; ++iw) {
              float acc = 0.f;
              for (int u = 0; u < k; ++u) {
                const int oh = ih * stride - pad + u;
                if (oh < 0 || oh >= Ho) continue;
                for (int v = 0; v < k; ++v) {
                  const int ow = iw * stride - pad + v;
                  if (ow < 0 || ow >= Wo) continue;
                  for (int co = 0; co < Cout; ++co)
                    acc += nd.grad.at(n, co, oh, ow) * wv2.at(ci, co, u, v);
                }
              }
              gx.at(n, ci, ih, iw) += acc;
            }
          }
        }
      }
    }
    if (nd.inputs[1]->requires_grad) {
      Tensor& gw = nd.inputs[1]->ensure_grad();
#pragma omp parallel for schedule(static)
      for (int ci = 0; ci < Cin; ++ci) {
        for (int co = 0; co < Cout; ++co) {
          for (int u = 0; u < k; ++u) {
            for (int v = 0; v < k; ++v) {
              double acc = 0.0;
              for (int n = 0; n < N; ++n) {
                for (int ih = 0; ih < H; ++ih) {
                  const int oh = ih * stride - pad + u;
                  if (oh < 0 || oh >= Ho) continue;
                  for (int iw = 0; iw < W; ++iw) {
                    const int ow = iw * stride - pad + v;
                    if (ow < 0 || ow >= Wo) continue;
                    acc += static_cast<double>(xv2.at(n, ci, ih, iw)) *
                           nd.grad.at(n, co, oh, ow);
                  }
                }
              }
              gw.at(ci, co, u, v) += static_cast<float>(acc);
            }
          }
        }
      }
    }
    if (nd.inputs[2]->requires_grad) {
      Tensor& gb = nd.inputs[2]->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
          double s = 0.0;
          for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) s += nd.grad.at(n, co, oh, ow);
          gb[co] += static_cast<float>(s);
        }
    }
  };
  return wrap(make_node(std::move(out), {x.node, w.node, b.node}, std::move(bwd)));
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta,
                 Tensor* running_mean, Tensor* running_var, bool training,
                 float momentum, float eps) {
  const Tensor& xv = x.value();
  require(xv.ndim() == 4, ErrorCode::invalid_argument, "batch_norm2d: 4-d input");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const size_t plane = static_cast<size_t>(H) * W;
  const size_t count = static_cast<size_t>(N) * plane;

  // Per-channel statistics; biased variance both for normalization and for
  // the running buffers.
  std::vector<float> mean(C), invstd(C);
  if (training) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = xv.data() + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double var = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = xv.data() + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      mean[c] = static_cast<float>(mu);
      invstd[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
      (*running_mean)[c] = (1.f - momentum) * (*running_mean)[c] +
                           momentum * static_cast<float>(mu);
      (*running_var)[c] = (1.f - momentum) * (*running_var)[c] +
                          momentum * static_cast<float>(var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = (*running_mean)[c];
      invstd[c] = 1.f / std::sqrt((*running_var)[c] + eps);
    }
  }

  Tensor out({N, C, H, W});
  const float* gm = gamma.value().data();
  const float* bt = beta.value().data();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    for (int n = 0; n < N; ++n) {
      const float* p = xv.data() + (static_cast<size_t>(n) * C + c) * plane;
      float* o = out.data() + (static_cast<size_t>(n) * C + c) * plane;
      const float a = gm[c] * invstd[c];
      const float bconst = bt[c] - a * mean[c];
      for (size_t i = 0; i < plane; ++i) o[i] = a * p[i] + bconst;
    }
  }

  auto bwd = [N, C, plane, count, mean, invstd, training](Node& nd) {
    const Tensor& xv2 = nd.inputs[0]->value;
    const float* gm2 = nd.inputs[1]->value.data();
    const bool need_gx = nd.inputs[0]->requires_grad;
    const bool need_gg = nd.inputs[1]->requires_grad;
    const bool need_gb = nd.inputs[2]->requires_grad;
    Tensor* gx = need_gx ? &nd.inputs[0]->ensure_grad() : nullptr;
    Tensor* gg = need_gg ? &nd.inputs[1]->ensure_grad() : nullptr;
    Tensor* gb = need_gb ? &nd.inputs[2]->ensure_grad() : nullptr;

#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = xv2.data() + (static_cast<size_t>(n) * C + c) * plane;
        const float* g = nd.grad.data() + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          sum_dy += g[i];
          sum_dy_xhat += static_cast<double>(g[i]) * (p[i] - mean[c]) * invstd[c];
        }
      }
      if (gg) (*gg)[c] += static_cast<float>(sum_dy_xhat);
      if (gb) (*gb)[c] += static_cast<float>(sum_dy);
      if (gx) {
        const float a = gm2[c] * invstd[c];
        const float mdy = static_cast<float>(sum_dy / static_cast<double>(count));
        const float mdyx = static_cast<float>(sum_dy_xhat / static_cast<double>(count));
        for (int n = 0; n < N; ++n) {
          const float* p = xv2.data() + (static_cast<size_t>(n) * C + c) * plane;
          const float* g = nd.grad.data() + (static_cast<size_t>(n) * C + c) * plane;
          float* gxp = gx->data() + (static_cast<size_t>(n) * C + c) * plane;
          if (training) {
            for (size_t i = 0; i < plane; ++i) {
              const float xhat = (p[i] - mean[c]) * invstd[c];
              gxp[i] += a * (g[i] - mdy - xhat * mdyx);
            }
          } else {
            for (size_t i = 0; i < plane; ++i) gxp[i] += a * g[i];
          }
        }
      }
    }
  };
  return wrap(make_node(std::move(out), {x.node, gamma.node, beta.node}, std::move(bwd)));
}

// ---------------------------------------------------------------------------
// max pooling
// ---------------------------------------------------------------------------

Var maxpool2d(const Var& x, int k, int stride, int pad) {
  const Tensor& xv = x.value();
  require(xv.ndim() == 4, ErrorCode::invalid_argument, "maxpool2d: 4-d input");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  require(Ho > 0 && Wo > 0, ErrorCode::invalid_argument, "maxpool2d: empty output");

  Tensor out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int>>(out.size());
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float* p = xv.data() + (static_cast<size_t>(n) * C + c) * H * W;
      const size_t base = (static_cast<size_t>(n) * C + c) * Ho * Wo;
      for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow) {
          const int h0 = std::max(0, oh * stride - pad);
          const int h1 = std::min(H, oh * stride - pad + k);
          const int w0 = std::max(0, ow * stride - pad);
          const int w1 = std::min(W, ow * stride - pad + k);
          float best = -std::numeric_limits<float>::infinity();
          int best_idx = h0 * W + w0;
          for (int ih = h0; ih < h1; ++ih)
            for (int iw = w0; iw < w1; ++iw) {
              const float v = p[static_cast<size_t>(ih) * W + iw];
              if (v > best) {
                best = v;
                best_idx = ih * W + iw;
              }
            }
          out[base + static_cast<size_t>(oh) * Wo + ow] = best;
          (*argmax)[base + static_cast<size_t>(oh) * Wo + ow] = best_idx;
        }
      }
    }
  }
  auto bwd = [N, C, H, W, Ho, Wo, argmax](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    Tensor& gx = nd.inputs[0]->ensure_grad();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        float* gp = gx.data() + (static_cast<size_t>(n) * C + c) * H * W;
        const size_t base = (static_cast<size_t>(n) * C + c) * Ho * Wo;
        for (int i = 0; i < Ho * Wo; ++i)
          gp[(*argmax)[base + i]] += nd.grad[base + i];
      }
    }
  };
  return wrap(make_node(std::move(out), {x.node}, std::move(bwd)));
}

// ---------------------------------------------------------------------------
// bilinear upsample (align_corners = false)
// ---------------------------------------------------------------------------

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  const Tensor& xv = x.value();
  require(xv.ndim() == 4, ErrorCode::invalid_argument, "upsample: 4-d input");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const double sh = static_cast<double>(H) / out_h;
  const double sw = static_cast<double>(W) / out_w;

  struct Lerp {
    int i0, i1;
    float w0, w1;
  };
  auto make_lerp = [](int out_n, int in_n, double s) {
    std::vector<Lerp> l(out_n);
    for (int o = 0; o < out_n; ++o) {
      double src = (o + 0.5) * s - 0.5;
      src = std::max(0.0, std::min(src, static_cast<double>(in_n - 1)));
      const int i0 = static_cast<int>(src);
      const int i1 = std::min(i0 + 1, in_n - 1);
      const float w1 = static_cast<float>(src - i0);
      l[o] = {i0, i1, 1.f - w1, w1};
    }
    return l;
  };
  auto lh = std::make_shared<std::vector<Lerp>>(make_lerp(out_h, H, sh));
  auto lw = std::make_shared<std::vector<Lerp>>(make_lerp(out_w, W, sw));

  Tensor out({N, C, out_h, out_w});
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float* p = xv.data() + (static_cast<size_t>(n) * C + c) * H * W;
      float* o = out.data() + (static_cast<size_t>(n) * C + c) * out_h * out_w;
      for (int oh = 0; oh < out_h; ++oh) {
        const auto& a = (*lh)[oh];
        for (int ow = 0; ow < out_w; ++ow) {
          const auto& b2 = (*lw)[ow];
          o[static_cast<size_t>(oh) * out_w + ow] =
              a.w0 * (b2.w0 * p[static_cast<size_t>(a.i0) * W + b2.i0] +
                      b2.w1 * p[static_cast<size_t>(a.i0) * W + b2.i1]) +
              a.w1 * (b2.w0 * p[static_cast<size_t>(a.i1) * W + b2.i0] +
                      b2.w1 * p[static_cast<size_t>(a.i1) * W + b2.i1]);
        }
      }
    }
  }
  auto bwd = [N, C, H, W, out_h, out_w, lh, lw](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    Tensor& gx = nd.inputs[0]->ensure_grad();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        float* gp = gx.data() + (static_cast<size_t>(n) * C + c) * H * W;
        const float* g = nd.grad.data() + (static_cast<size_t>(n) * C + c) * out_h * out_w;
        for (int oh = 0; oh < out_h; ++oh) {
          const auto& a = (*lh)[oh];
          for (int ow = 0; ow < out_w; ++ow) {
            const auto& b2 = (*lw)[ow];
            const float gv = g[static_cast<size_t>(oh) * out_w + ow];
            gp[static_cast<size_t>(a.i0) * W + b2.i0] += a.w0 * b2.w0 * gv;
            gp[static_cast<size_t>(a.i0) * W + b2.i1] += a.w0 * b2.w1 * gv;
            gp[static_cast<size_t>(a.i1) * W + b2.i0] += a.w1 * b2.w0 * gv;
            gp[static_cast<size_t>(a.i1) * W + b2.i1] += a.w1 * b2.w1 * gv;
          }
        }
      }
    }
  };
  return wrap(make_node(std::move(out), {x.node}, std::move(bwd)));
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

Var sum_all(const Var& x) {
  Tensor out({1});
  out[0] = static_cast<float>(x.value().sum());
  return wrap(make_node(std::move(out), {x.node}, [](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    Tensor& g = n.inputs[0]->ensure_grad();
    for (auto& v : g.vec()) v += n.grad[0];
  }));
}

Var column_sum(const Var& x, int col) {
  const Tensor& xv = x.value();
  require(xv.ndim() == 2 && col >= 0 && col < xv.dim(1),
          ErrorCode::invalid_argument, "column_sum: bad column");
  const int N = xv.dim(0);
  Tensor out({1});
  double s = 0.0;
  for (int n = 0; n < N; ++n) s += xv.at(n, col);
  out[0] = static_cast<float>(s);
  return wrap(make_node(std::move(out), {x.node}, [col, N](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    Tensor& g = nd.inputs[0]->ensure_grad();
    for (int n = 0; n < N; ++n) g.at(n, col) += nd.grad[0];
  }));
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const Tensor& lv = logits.value();
  require(lv.ndim() == 2, ErrorCode::invalid_argument, "cross_entropy: 2-d logits");
  const int N = lv.dim(0), C = lv.dim(1);
  require(static_cast<int>(labels.size()) == N, ErrorCode::invalid_argument,
          "cross_entropy: label count mismatch");
  auto probs = std::make_shared<Tensor>(Tensor({N, C}));
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    require(labels[n] >= 0 && labels[n] < C, ErrorCode::invalid_argument,
            "cross_entropy: label out of range");
    double m = lv.at(n, 0);
    for (int c = 1; c < C; ++c) m = std::max(m, static_cast<double>(lv.at(n, c)));
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(lv.at(n, c)) - m);
    for (int c = 0; c < C; ++c)
      probs->at(n, c) =
          static_cast<float>(std::exp(static_cast<double>(lv.at(n, c)) - m) / z);
    total += (m + std::log(z)) - lv.at(n, labels[n]);
  }
  Tensor out({1});
  out[0] = static_cast<float>(total / N);
  auto lbl = std::make_shared<std::vector<int>>(labels);
  return wrap(make_node(std::move(out), {logits.node}, [probs, lbl, N, C](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    Tensor& g = nd.inputs[0]->ensure_grad();
    const float scale = nd.grad[0] / static_cast<float>(N);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        float d = probs->at(n, c);
        if (c == (*lbl)[n]) d -= 1.f;
        g.at(n, c) += scale * d;
      }
  }));
}

Var soft_dice(const Var& pred, const Tensor& target, float smooth) {
  const Tensor& pv = pred.value();
  require(pv.same_shape(target), ErrorCode::invalid_argument,
          "soft_dice: shape mismatch");
  require(pv.ndim() == 4 && pv.dim(1) == 1, ErrorCode::invalid_argument,
          "soft_dice: expected [N,1,H,W]");
  const int N = pv.dim(0);
  const size_t plane = pv.size() / static_cast<size_t>(N);

  auto inter = std::make_shared<std::vector<double>>(N);
  auto sums = std::make_shared<std::vector<double>>(N);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const float* p = pv.data() + static_cast<size_t>(n) * plane;
    const float* m = target.data() + static_cast<size_t>(n) * plane;
    double I = 0.0, S = 0.0;
    for (size_t i = 0; i < plane; ++i) {
      I += static_cast<double>(p[i]) * m[i];
      S += static_cast<double>(p[i]) + m[i];
    }
    (*inter)[n] = I;
    (*sums)[n] = S;
    total += 1.0 - (2.0 * I + smooth) / (S + smooth);
  }
  Tensor out({1});
  out[0] = static_cast<float>(total / N);
  auto tgt = std::make_shared<Tensor>(target);
  return wrap(make_node(std::move(out), {pred.node},
                        [inter, sums, tgt, smooth, N, plane](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    Tensor& g = nd.inputs[0]->ensure_grad();
    const float gscale = nd.grad[0] / static_cast<float>(N);
    for (int n = 0; n < N; ++n) {
      const double denom = (*sums)[n] + smooth;
      const double num = 2.0 * (*inter)[n] + smooth;
      const float* m = tgt->data() + static_cast<size_t>(n) * plane;
      float* gp = g.data() + static_cast<size_t>(n) * plane;
      for (size_t i = 0; i < plane; ++i) {
        const double d = (num - 2.0 * m[i] * denom) / (denom * denom);
        gp[i] += gscale * static_cast<float>(d);
      }
    }
  }));
}

// ---------------------------------------------------------------------------
// parameters, init, optimizer
// ---------------------------------------------------------------------------

void init_conv_weight(Tensor& w, Rng& rng) {
  const int fan_in = w.dim(1) * w.dim(2) * w.dim(3);
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : w.vec()) v = static_cast<float>(rng.normal(0.0, std));
}

void init_linear_weight(Tensor& w, Rng& rng) {
  const int fan_in = w.dim(1);
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : w.vec()) v = static_cast<float>(rng.normal(0.0, std));
}

Adam::Adam(std::vector<Param> params, double lr, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.value().size(), 0.f);
    v_.emplace_back(p.var.value().size(), 0.f);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    Tensor& g = p.var.node->ensure_grad();
    g.fill(0.f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& w = params_[pi].var.value();
    const Tensor& g = params_[pi].var.node->ensure_grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    const auto n = static_cast<long long>(w.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) {
      const float gi = g[static_cast<size_t>(i)];
      m[i] = static_cast<float>(beta1_) * m[i] + static_cast<float>(1.0 - beta1_) * gi;
      v[i] = static_cast<float>(beta2_) * v[i] + static_cast<float>(1.0 - beta2_) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[static_cast<size_t>(i)] -=
          static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

// ---------------------------------------------------------------------------
// module blocks
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng,
               int dilation_)
    : stride(stride_), pad(pad_), dilation(dilation_) {
  Tensor w({out_ch, in_ch, k, k});
  init_conv_weight(w, rng);
  weight = Var(std::move(w), true);
  bias = Var(Tensor({out_ch}), true);
}

void Conv2d::collect(const std::string& prefix, std::vector<Param>& out) {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int k, int stride_,
                                 int pad_, int out_pad_, Rng& rng)
    : stride(stride_), pad(pad_), out_pad(out_pad_) {
  Tensor w({in_ch, out_ch, k, k});
  const int fan_in = in_ch * k * k;
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : w.vec()) v = static_cast<float>(rng.normal(0.0, std));
  weight = Var(std::move(w), true);
  bias = Var(Tensor({out_ch}), true);
}

void ConvTranspose2d::collect(const std::string& prefix, std::vector<Param>& out) {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

BatchNorm2d::BatchNorm2d(int ch) {
  gamma = Var(Tensor({ch}, 1.f), true);
  beta = Var(Tensor({ch}), true);
  running_mean = Tensor({ch});
  running_var = Tensor({ch}, 1.f);
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<Param>& out) {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm2d::collect_buffers(
    const std::string& prefix, std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(prefix + ".running_mean", &running_mean);
  out.emplace_back(prefix + ".running_var", &running_var);
}

Linear::Linear(int in_f, int out_f, Rng& rng) {
  Tensor w({out_f, in_f});
  init_linear_weight(w, rng);
  weight = Var(std::move(w), true);
  bias = Var(Tensor({out_f}), true);
}

void Linear::collect(const std::string& prefix, std::vector<Param>& out) {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

size_t count_scalars(const std::vector<Param>& params) {
  size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

}  // namespace xaiens::nn
