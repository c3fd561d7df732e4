// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "egopose/nn/tensor.hpp"

namespace egopose::nn {

/// Reverse-mode tape. Every op appends a node; `backward` replays the nodes
/// in reverse and accumulates into gradient buffers. Nodes that do not
/// depend on a trainable leaf carry no gradient and are skipped.
class Tape {
 public:
  using Id = int;

  Id leaf(Tensor value, bool requires_grad) {
    nodes_.push_back({std::move(value), {}, requires_grad, {}});
    return static_cast<Id>(nodes_.size() - 1);
  }
  Id constant(Tensor value) { return leaf(std::move(value), false); }

  Id op(Tensor value, std::initializer_list<Id> inputs, std::function<void(Tape&)> backward) {
    return op(std::move(value), std::span<const Id>(inputs.begin(), inputs.size()), std::move(backward));
  }
  Id op(Tensor value, std::span<const Id> inputs, std::function<void(Tape&)> backward) {
    bool needs = false;
    for (Id i : inputs) needs = needs || nodes_[static_cast<std::size_t>(i)].requires_grad;
    nodes_.push_back({std::move(value), {}, needs, needs ? std::move(backward) : nullptr});
    return static_cast<Id>(nodes_.size() - 1);
  }

  const Tensor& value(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradient buffer of a node, zero-filled on first access.
  Tensor& grad(Id id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.dims != n.value.dims) n.grad = Tensor(n.value.dims);
    return n.grad;
  }
  bool has_grad(Id id) const { return !nodes_[static_cast<std::size_t>(id)].grad.data.empty(); }

  void backward(Id root) {
    if (value(root).size() != 1) fail(ErrorCode::kShape, "backward root must be a scalar");
    grad(root)[0] = 1.0;
    for (Id i = root; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && has_grad(i)) {
        current_ = i;
        n.backward(*this);
      }
    }
  }

  /// Gradient flowing into the node whose backward closure is running.
  const Tensor& upstream() const { return nodes_[static_cast<std::size_t>(current_)].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };
  std::vector<Node> nodes_;
  Id current_ = -1;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  int channels, height, width, kernel, stride, pad, out_h, out_w;
  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h * out_w; }
};

/// Unfolds one CHW image into a (C*k*k, out_h*out_w) patch matrix.
inline void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const int ncols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + static_cast<std::ptrdiff_t>((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            const bool inside = iy >= 0 && iy < g.height && ix >= 0 && ix < g.width;
            row[oy * g.out_w + ox] =
                inside ? img[(static_cast<std::ptrdiff_t>(c) * g.height + iy) * g.width + ix] : 0.0;
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters the patch matrix back, accumulating.
inline void col2im(const double* cols, const ConvGeometry& g, double* img) {
  const int ncols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols + static_cast<std::ptrdiff_t>((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.width) continue;
            img[(static_cast<std::ptrdiff_t>(c) * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

inline int conv_out(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

}  // namespace detail

/// 2D convolution. x: (N,Cin,H,W), w: (Cout,Cin,k,k), b: (Cout).
inline Tape::Id conv2d(Tape& t, Tape::Id x, Tape::Id w, Tape::Id b, int stride, int pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3)) {
    fail(ErrorCode::kShape, "conv2d: input " + xv.shape_string() + " vs weight " + wv.shape_string());
  }
  require_shape(t.value(b), {wv.dim(0)}, "conv2d bias");
  const int n = xv.dim(0);
  const int cout = wv.dim(0);
  const detail::ConvGeometry g{xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), stride, pad,
                               detail::conv_out(xv.dim(2), wv.dim(2), stride, pad),
                               detail::conv_out(xv.dim(3), wv.dim(2), stride, pad)};
  if (g.out_h <= 0 || g.out_w <= 0) fail(ErrorCode::kShape, "conv2d: empty output");
  Tensor out({n, cout, g.out_h, g.out_w});
  std::vector<double> cols(static_cast<std::size_t>(g.rows()) * static_cast<std::size_t>(g.cols()));
  const detail::ConstMapMat wm(wv.data.data(), cout, g.rows());
  const auto in_plane = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const auto out_plane = static_cast<std::size_t>(cout) * g.cols();
  const Eigen::Map<const Eigen::VectorXd> bias(t.value(b).data.data(), cout);
  for (int i = 0; i < n; ++i) {
    detail::im2col(xv.data.data() + i * in_plane, g, cols.data());
    detail::MapMat o(out.data.data() + i * out_plane, cout, g.cols());
    o.noalias() = wm * detail::ConstMapMat(cols.data(), g.rows(), g.cols());
    o.colwise() += bias;
  }
  return t.op(std::move(out), {x, w, b}, [=](Tape& tp) {
    const Tensor& go = tp.upstream();
    const Tensor& xin = tp.value(x);
    const detail::ConstMapMat wmat(tp.value(w).data.data(), cout, g.rows());
    std::vector<double> col(static_cast<std::size_t>(g.rows()) * static_cast<std::size_t>(g.cols()));
    std::vector<double> dcol(col.size());
    for (int i = 0; i < n; ++i) {
      const detail::ConstMapMat gom(go.data.data() + i * out_plane, cout, g.cols());
      if (tp.requires_grad(w)) {
        detail::im2col(xin.data.data() + i * in_plane, g, col.data());
        detail::MapMat(tp.grad(w).data.data(), cout, g.rows()).noalias() +=
            gom * detail::ConstMapMat(col.data(), g.rows(), g.cols()).transpose();
      }
      if (tp.requires_grad(b)) {
        Eigen::Map<Eigen::VectorXd>(tp.grad(b).data.data(), cout) += gom.rowwise().sum();
      }
      if (tp.requires_grad(x)) {
        detail::MapMat(dcol.data(), g.rows(), g.cols()).noalias() = wmat.transpose() * gom;
        detail::col2im(dcol.data(), g, tp.grad(x).data.data() + i * in_plane);
      }
    }
  });
}

/// Transposed convolution, the adjoint of conv2d with the same geometry.
/// x: (N,Cin,H,W), w: (Cin,Cout,k,k), b: (Cout). Output side is
/// (H-1)*stride - 2*pad + k.
inline Tape::Id conv_transpose2d(Tape& t, Tape::Id x, Tape::Id w, Tape::Id b, int stride, int pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(0) != xv.dim(1) || wv.dim(2) != wv.dim(3)) {
    fail(ErrorCode::kShape, "conv_transpose2d: input " + xv.shape_string() + " vs weight " + wv.shape_string());
  }
  const int n = xv.dim(0);
  const int cin = xv.dim(1);
  const int cout = wv.dim(1);
  const int k = wv.dim(2);
  require_shape(t.value(b), {cout}, "conv_transpose2d bias");
  const int oh = (xv.dim(2) - 1) * stride - 2 * pad + k;
  const int ow = (xv.dim(3) - 1) * stride - 2 * pad + k;
  if (oh <= 0 || ow <= 0) fail(ErrorCode::kShape, "conv_transpose2d: empty output");
  // Geometry of the forward conv that maps the output back onto the input.
  const detail::ConvGeometry g{cout, oh, ow, k, stride, pad, xv.dim(2), xv.dim(3)};
  if (detail::conv_out(oh, k, stride, pad) != g.out_h || detail::conv_out(ow, k, stride, pad) != g.out_w) {
    fail(ErrorCode::kShape, "conv_transpose2d: inconsistent geometry");
  }
  Tensor out({n, cout, oh, ow});
  std::vector<double> cols(static_cast<std::size_t>(g.rows()) * static_cast<std::size_t>(g.cols()));
  const detail::ConstMapMat wm(wv.data.data(), cin, g.rows());
  const auto in_plane = static_cast<std::size_t>(cin) * g.cols();
  const auto out_plane = static_cast<std::size_t>(cout) * oh * ow;
  const auto hw = static_cast<std::size_t>(oh) * ow;
  for (int i = 0; i < n; ++i) {
    detail::MapMat(cols.data(), g.rows(), g.cols()).noalias() =
        wm.transpose() * detail::ConstMapMat(xv.data.data() + i * in_plane, cin, g.cols());
    double* o = out.data.data() + i * out_plane;
    detail::col2im(cols.data(), g, o);
    for (int c = 0; c < cout; ++c) {
      const double bc = t.value(b)[static_cast<std::size_t>(c)];
      for (std::size_t p = 0; p < hw; ++p) o[c * hw + p] += bc;
    }
  }
  return t.op(std::move(out), {x, w, b}, [=](Tape& tp) {
    const Tensor& go = tp.upstream();
    const Tensor& xin = tp.value(x);
    const detail::ConstMapMat wmat(tp.value(w).data.data(), cin, g.rows());
    std::vector<double> col(static_cast<std::size_t>(g.rows()) * static_cast<std::size_t>(g.cols()));
    for (int i = 0; i < n; ++i) {
      const double* goi = go.data.data() + i * out_plane;
      detail::im2col(goi, g, col.data());
      const detail::ConstMapMat colm(col.data(), g.rows(), g.cols());
      if (tp.requires_grad(w)) {
        detail::MapMat(tp.grad(w).data.data(), cin, g.rows()).noalias() +=
            detail::ConstMapMat(xin.data.data() + i * in_plane, cin, g.cols()) * colm.transpose();
      }
      if (tp.requires_grad(b)) {
        Tensor& gb = tp.grad(b);
        for (int c = 0; c < cout; ++c) {
          double s = 0.0;
          for (std::size_t p = 0; p < hw; ++p) s += goi[c * hw + p];
          gb[static_cast<std::size_t>(c)] += s;
        }
      }
      if (tp.requires_grad(x)) {
        detail::MapMat(tp.grad(x).data.data() + i * in_plane, cin, g.cols()).noalias() += wmat * colm;
      }
    }
  });
}

/// log(1 + e^x) - log 2, computed without overflow. The shift puts the
/// activation through the origin.
inline double softplus_value(double v) {
  return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) - 0.6931471805599453;
}

inline Tape::Id softplus(Tape& t, Tape::Id x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.dims);
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = softplus_value(xv[i]);
  return t.op(std::move(out), {x}, [=](Tape& tp) {
    const Tensor& go = tp.upstream();
    const Tensor& xin = tp.value(x);
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < xin.size(); ++i) gx[i] += go[i] / (1.0 + std::exp(-xin[i]));
  });
}

inline Tape::Id add(Tape& t, Tape::Id a, Tape::Id b) {
  const Tensor& av = t.value(a);
  require_shape(t.value(b), av.dims, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += t.value(b)[i];
  return t.op(std::move(out), {a, b}, [=](Tape& tp) {
    const Tensor& go = tp.upstream();
    for (Tape::Id id : {a, b}) {
      if (!tp.requires_grad(id)) continue;
      Tensor& g = tp.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
    }
  });
}

/// Concatenation along the channel axis of NCHW tensors.
inline Tape::Id concat_channels(Tape& t, const std::vector<Tape::Id>& parts) {
  if (parts.empty()) fail(ErrorCode::kShape, "concat of nothing");
  const Tensor& first = t.value(parts.front());
  const int n = first.dim(0);
  const int h = first.dim(2);
  const int w = first.dim(3);
  int c_total = 0;
  for (Tape::Id p : parts) {
    const Tensor& v = t.value(p);
    if (v.rank() != 4 || v.dim(0) != n || v.dim(2) != h || v.dim(3) != w) {
      fail(ErrorCode::kShape, "concat: mismatched feature " + v.shape_string() + " vs " + first.shape_string());
    }
    c_total += v.dim(1);
  }
  Tensor out({n, c_total, h, w});
  const auto hw = static_cast<std::size_t>(h) * w;
  std::vector<std::size_t> lens;
  for (Tape::Id p : parts) lens.push_back(static_cast<std::size_t>(t.value(p).dim(1)) * hw);
  const auto sample = static_cast<std::size_t>(c_total) * hw;
  for (int i = 0; i < n; ++i) {
    std::size_t offset = static_cast<std::size_t>(i) * sample;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto src = t.value(parts[k]).data.begin() + static_cast<std::ptrdiff_t>(i * lens[k]);
      std::copy_n(src, lens[k], out.data.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += lens[k];
    }
  }
  return t.op(std::move(out), std::span<const Tape::Id>(parts), [parts, lens, n, sample](Tape& tp) {
    const Tensor& go = tp.upstream();
    for (int i = 0; i < n; ++i) {
      std::size_t offset = static_cast<std::size_t>(i) * sample;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (tp.requires_grad(parts[k])) {
          Tensor& g = tp.grad(parts[k]);
          const std::size_t dst = static_cast<std::size_t>(i) * lens[k];
          for (std::size_t e = 0; e < lens[k]; ++e) g[dst + e] += go[offset + e];
        }
        offset += lens[k];
      }
    }
  });
}

/// Fully connected layer over the flattened per-sample features.
/// x: (N, ...), w: (Out, D), b: (Out) -> (N, Out).
inline Tape::Id linear(Tape& t, Tape::Id x, Tape::Id w, Tape::Id b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const int n = xv.dim(0);
  const int d = static_cast<int>(xv.size() / static_cast<std::size_t>(n));
  if (wv.rank() != 2 || wv.dim(1) != d) {
    fail(ErrorCode::kShape, "linear: input " + xv.shape_string() + " vs weight " + wv.shape_string());
  }
  const int m = wv.dim(0);
  require_shape(t.value(b), {m}, "linear bias");
  Tensor out({n, m});
  const detail::ConstMapMat xm(xv.data.data(), n, d);
  const detail::ConstMapMat wm(wv.data.data(), m, d);
  detail::MapMat om(out.data.data(), n, m);
  om.noalias() = xm * wm.transpose();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(t.value(b).data.data(), m);
  return t.op(std::move(out), {x, w, b}, [=](Tape& tp) {
    const detail::ConstMapMat gom(tp.upstream().data.data(), n, m);
    if (tp.requires_grad(w)) {
      detail::MapMat(tp.grad(w).data.data(), m, d).noalias() +=
          gom.transpose() * detail::ConstMapMat(tp.value(x).data.data(), n, d);
    }
    if (tp.requires_grad(b)) {
      Eigen::Map<Eigen::RowVectorXd>(tp.grad(b).data.data(), m) += gom.colwise().sum();
    }
    if (tp.requires_grad(x)) {
      detail::MapMat(tp.grad(x).data.data(), n, d).noalias() +=
          gom * detail::ConstMapMat(tp.value(w).data.data(), m, d);
    }
  });
}

/// weight * sum((pred - target)^2) as a scalar node.
inline Tape::Id squared_error(Tape& t, Tape::Id pred, const Tensor& target, double weight) {
  const Tensor& pv = t.value(pred);
  require_shape(target, pv.dims, "squared_error target");
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double r = pv[i] - target[i];
    s += r * r;
  }
  return t.op(Tensor({1}, weight * s), {pred}, [=](Tape& tp) {
    const double go = tp.upstream()[0];
    const Tensor& p = tp.value(pred);
    Tensor& g = tp.grad(pred);
    for (std::size_t i = 0; i < p.size(); ++i) g[i] += 2.0 * weight * go * (p[i] - target[i]);
  });
}

/// Sum of scalar nodes.
inline Tape::Id sum_scalars(Tape& t, const std::vector<Tape::Id>& terms) {
  double s = 0.0;
  for (Tape::Id id : terms) s += t.value(id)[0];
  return t.op(Tensor({1}, s), std::span<const Tape::Id>(terms), [=](Tape& tp) {
    const double go = tp.upstream()[0];
    for (Tape::Id id : terms) {
      if (tp.requires_grad(id)) tp.grad(id)[0] += go;
    }
  });
}

}  // namespace egopose::nn
