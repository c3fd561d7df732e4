// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "egopose/error.hpp"

namespace egopose::nn {

/// Dense row-major tensor of doubles. Image tensors are NCHW.
struct Tensor {
  std::vector<int> dims;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0) : dims(std::move(shape)) {
    data.assign(count(dims), fill);
  }

  static std::size_t count(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return dims.at(i); }
  int rank() const { return static_cast<int>(dims.size()); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * static_cast<std::size_t>(dims[1]) + static_cast<std::size_t>(c)) *
                     static_cast<std::size_t>(dims[2]) + static_cast<std::size_t>(h)) *
                    static_cast<std::size_t>(dims[3]) + static_cast<std::size_t>(w)];
  }
  double at(int n, int c, int h, int w) const { return const_cast<Tensor*>(this)->at(n, c, h, w); }

  std::string shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
    return s + ")";
  }
};

inline void require_shape(const Tensor& t, const std::vector<int>& expected, const std::string& what) {
  if (t.dims != expected) {
    Tensor e;
    e.dims = expected;
    fail(ErrorCode::kShape, what + ": expected shape " + e.shape_string() + ", got " + t.shape_string());
  }
}

}  // namespace egopose::nn
