#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vlhsa::nn {

/// Dense row-major tensor of doubles. The math layer works with rank-2
/// shapes; higher ranks only appear for raw piece arrays loaded from disk.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s);

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, double v);
  static Tensor from(std::vector<int64_t> s, std::vector<double> d);

  int64_t numel() const;
  bool empty() const { return data.empty(); }

  // rank-2 accessors
  int64_t rows() const;
  int64_t cols() const;
  double& at(int64_t r, int64_t c) { return data[r * cols() + c]; }
  double at(int64_t r, int64_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  void fill(double v);
  std::string shape_str() const;
};

}  // namespace vlhsa::nn
