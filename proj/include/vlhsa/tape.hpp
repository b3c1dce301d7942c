#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "vlhsa/tensor.hpp"

namespace vlhsa::nn {

struct Var {
  int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Reverse-mode autodiff tape over rank-2 tensors. Build one tape per forward
/// pass; parameter gradients accumulate into caller-owned sink tensors on
/// backward(). Values are eagerly computed, so a tape is also usable as a
/// plain forward evaluator.
class Tape {
 public:
  Var constant(Tensor t);
  /// Leaf bound to an external parameter; `grad_sink` (same shape, may be
  /// null) receives the accumulated gradient after backward().
  Var param(const Tensor& value, Tensor* grad_sink);

  // linear algebra
  Var matmul(Var a, Var b);     // [m,k] x [k,n] -> [m,n]
  Var matmul_nt(Var a, Var b);  // a * b^T : [m,k] x [n,k] -> [m,n]

  // pointwise / broadcast
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_rowvec(Var x, Var b);  // [n,d] + [1,d]
  Var mul_rowvec(Var x, Var g);  // [n,d] * [1,d]
  Var sub_colvec(Var x, Var c);  // [n,d] - [n,1]
  Var div_colvec(Var x, Var c);  // [n,d] / [n,1]

  // nonlinearities
  Var sigmoid(Var x);
  Var gelu(Var x);
  Var softplus(Var x);
  Var log_plus(Var x, double eps);   // log(x + eps)
  Var sqrt_plus(Var x, double eps);  // sqrt(x + eps)

  // reductions / structure
  Var softmax_rows(Var x);
  Var log_softmax_rows(Var x);
  Var row_max(Var x);         // [n,d] -> [n,1], ties to first argmax
  Var mean_over_rows(Var x);  // [n,d] -> [1,d]
  Var mean_over_cols(Var x);  // [n,d] -> [n,1]
  Var sum_all(Var x);         // -> [1,1]
  Var cumavg_rows(Var x);     // out[i] = mean(x[0..i]) over rows
  Var concat_cols(const std::vector<Var>& xs);
  Var slice_cols(Var x, int64_t c0, int64_t c1);
  Var slice_rows(Var x, int64_t r0, int64_t r1);
  Var gather_rows(Var x, std::vector<int64_t> ids);
  Var gather_elems(Var x, std::vector<std::pair<int64_t, int64_t>> ij);  // -> [P,1]
  Var normalize_rows(Var x, double eps);  // v / max(||v||, eps)

  void backward(Var scalar_out);

  const Tensor& val(Var v) const { return nodes_[v.idx].value; }
  const Tensor& grad(Var v) const { return nodes_[v.idx].grad; }
  double scalar(Var v) const;
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Tensor* sink = nullptr;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;

  Var push(Tensor value);
  Node& node(Var v) { return nodes_[v.idx]; }
  Tensor& gref(int32_t idx) { return nodes_[idx].grad; }
  friend struct TapeDetail;
};

}  // namespace vlhsa::nn
