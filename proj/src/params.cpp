#include "vlhsa/params.hpp"

#include <cmath>
#include <stdexcept>

namespace vlhsa::nn {

ParamStore::Entry& ParamStore::insert(const std::string& name, Tensor value) {
  if (has(name)) throw std::invalid_argument("params: duplicate name " + name);
  auto e = std::make_unique<Entry>();
  e->name = name;
  e->grad = Tensor::zeros(value.shape);
  e->value = std::move(value);
  entries_.push_back(std::move(e));
  index_[name] = entries_.size() - 1;
  return *entries_.back();
}

Tensor& ParamStore::add(const std::string& name, std::vector<int64_t> shape, int64_t fan_in,
                        Rng& rng) {
  if (fan_in < 1) throw std::invalid_argument("params: fan_in must be positive");
  Tensor t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return insert(name, std::move(t)).value;
}

Tensor& ParamStore::add_zeros(const std::string& name, std::vector<int64_t> shape) {
  return insert(name, Tensor::zeros(std::move(shape))).value;
}

Tensor& ParamStore::add_full(const std::string& name, std::vector<int64_t> shape, double v) {
  return insert(name, Tensor::full(std::move(shape), v)).value;
}

Tensor& ParamStore::value(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("params: unknown name " + name);
  return entries_[it->second]->value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("params: unknown name " + name);
  return entries_[it->second]->value;
}

Tensor& ParamStore::grad(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("params: unknown name " + name);
  return entries_[it->second]->grad;
}

ParamRef ParamStore::ref(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("params: unknown name " + name);
  Entry& e = *entries_[it->second];
  return ParamRef{&e.value, &e.grad};
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) e->grad.fill(0.0);
}

double ParamStore::grad_norm() const {
  double s = 0;
  for (const auto& e : entries_)
    for (double g : e->grad.data) s += g * g;
  return std::sqrt(s);
}

void ParamStore::scale_grads(double s) {
  for (auto& e : entries_)
    for (double& g : e->grad.data) g *= s;
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e->value.numel();
  return n;
}

}  // namespace vlhsa::nn
