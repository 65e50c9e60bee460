#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "planwrite/nn/rng.hpp"

namespace planwrite::nn {

/// Dense row-major array. Values are held in 64-bit precision; checkpoints
/// store them as 32-bit floats.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is attached

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const;
  bool has_grad() const { return grad.size() == data.size(); }
};

/// Named parameters in deterministic (lexicographic) order.
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor>;

  /// Zero-filled tensor; throws UsageError if the name exists.
  Tensor& add(const std::string& name, std::vector<std::size_t> shape);

  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  /// uniform(-scale, scale) drawn in name order.
  void init_uniform(Rng& rng, double scale);
  void fill(double value);

  /// Allocates (if needed) and zeroes every gradient buffer.
  void zero_grad();
  double grad_norm() const;
  std::size_t num_values() const;

  /// Rounds every value to the nearest 32-bit float.
  void round_to_float();

  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }
  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  std::size_t size() const { return tensors_.size(); }

 private:
  Map tensors_;
};

/// Global-norm clip to `clip`, then p -= lr * grad, then zero the gradients.
/// Throws UsageError when a tensor has no gradient buffer. Returns the
/// pre-clip gradient norm.
double sgd_step(ParamSet& params, double lr, double clip);

}  // namespace planwrite::nn
