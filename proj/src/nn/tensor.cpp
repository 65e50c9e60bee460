#include "planwrite/nn/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "planwrite/error.hpp"

namespace planwrite::nn {

Tensor::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  data.assign(n, 0.0);
}

std::size_t Tensor::cols() const {
  if (shape.size() < 2) return 1;
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
  return c;
}

Tensor& ParamSet::add(const std::string& name, std::vector<std::size_t> shape) {
  auto [it, inserted] = tensors_.emplace(name, Tensor(std::move(shape)));
  if (!inserted) throw UsageError("duplicate parameter name: " + name);
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

void ParamSet::init_uniform(Rng& rng, double scale) {
  for (auto& [name, t] : tensors_) {
    for (auto& v : t.data) v = rng.uniform(-scale, scale);
  }
}

void ParamSet::fill(double value) {
  for (auto& [name, t] : tensors_) std::fill(t.data.begin(), t.data.end(), value);
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : tensors_) t.grad.assign(t.data.size(), 0.0);
}

double ParamSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, t] : tensors_) {
    for (double g : t.grad) sq += g * g;
  }
  return std::sqrt(sq);
}

std::size_t ParamSet::num_values() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

void ParamSet::round_to_float() {
  for (auto& [name, t] : tensors_) {
    for (auto& v : t.data) v = static_cast<double>(static_cast<float>(v));
  }
}

double sgd_step(ParamSet& params, double lr, double clip) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw UsageError("parameter has no gradient: " + name);
  }
  const double norm = params.grad_norm();
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double scale = (std::isfinite(clip) && norm > clip) ? clip / norm : 1.0;
  for (auto& [name, t] : params) {
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      t.data[i] -= lr * scale * t.grad[i];
      t.grad[i] = 0.0;
    }
  }
  return norm;
}

}  // namespace planwrite::nn
