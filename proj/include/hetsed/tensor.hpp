#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "hetsed/core.hpp"

namespace hetsed {

// Dense row-major value container; shape is bookkeeping for checkpoints and
// sanity checks, kernels index the flat data directly.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<int> dims) {
    Tensor t;
    t.shape = std::move(dims);
    t.data.assign(t.shape_numel(), 0.0);
    return t;
  }

  int numel() const { return static_cast<int>(data.size()); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

 private:
  std::size_t shape_numel() const {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ConfigError("tensor dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }
};

}  // namespace hetsed
