#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlhsa/rng.hpp"
#include "vlhsa/tape.hpp"
#include "vlhsa/tensor.hpp"

namespace vlhsa::nn {

/// Pointer pair into a ParamStore entry; what model code passes around.
struct ParamRef {
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

inline Var pvar(Tape& tp, const ParamRef& r) { return tp.param(*r.value, r.grad); }

/// Named parameter tensors with paired gradient buffers. Insertion order is
/// stable and defines optimizer/checkpoint iteration order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  Tensor& add(const std::string& name, std::vector<int64_t> shape, int64_t fan_in, Rng& rng);
  Tensor& add_zeros(const std::string& name, std::vector<int64_t> shape);
  Tensor& add_full(const std::string& name, std::vector<int64_t> shape, double v);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  ParamRef ref(const std::string& name);

  size_t count() const { return entries_.size(); }
  Entry& entry(size_t i) { return *entries_[i]; }
  const Entry& entry(size_t i) const { return *entries_[i]; }

  void zero_grads();
  double grad_norm() const;
  void scale_grads(double s);
  int64_t total_params() const;

 private:
  std::vector<std::unique_ptr<Entry>> entries_;
  std::unordered_map<std::string, size_t> index_;
  Entry& insert(const std::string& name, Tensor value);
};

}  // namespace vlhsa::nn
