#include "vlhsa/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vlhsa::nn {

Tensor::Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension");
    n *= d;
  }
  data.assign(static_cast<size_t>(n), 0.0);
}

Tensor Tensor::full(std::vector<int64_t> s, double v) {
  Tensor t(std::move(s));
  t.fill(v);
  return t;
}

Tensor Tensor::from(std::vector<int64_t> s, std::vector<double> d) {
  Tensor t;
  t.shape = std::move(s);
  int64_t n = 1;
  for (int64_t dim : t.shape) n *= dim;
  if (n != static_cast<int64_t>(d.size()))
    throw std::invalid_argument("tensor: data size does not match shape");
  t.data = std::move(d);
  return t;
}

int64_t Tensor::numel() const {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

int64_t Tensor::rows() const {
  if (shape.size() != 2) throw std::invalid_argument("tensor: rank-2 expected, got " + shape_str());
  return shape[0];
}

int64_t Tensor::cols() const {
  if (shape.size() != 2) throw std::invalid_argument("tensor: rank-2 expected, got " + shape_str());
  return shape[1];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data) x = v;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace vlhsa::nn
