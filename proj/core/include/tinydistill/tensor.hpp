#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tinydistill/errors.hpp"
#include "tinydistill/rng.hpp"

namespace tinydistill {

// Dense row-major tensor. T is float for training and double for
// verification (finite-difference gradient checks run the whole stack in
// 64-bit). The gradient buffer is allocated lazily on first accumulation.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // empty until ensure_grad(); same length as data after

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  bool has_grad() const { return !grad.empty(); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }

  void zero_grad() {
    if (!grad.empty()) grad.assign(data.size(), T(0));
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, bool requires_grad = false) {
  auto t = std::make_shared<Tensor<T>>();
  t->data.assign(static_cast<std::size_t>(shape_numel(shape)), T(0));
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  return t;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("tensor data size does not match shape " + shape_str(shape));
  auto t = std::make_shared<Tensor<T>>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

// Gaussian-initialized parameter tensor (mean 0).
template <typename T>
TensorPtr<T> make_param(std::vector<int> shape, T stddev, Rng& rng) {
  auto t = make_tensor<T>(std::move(shape), true);
  for (auto& v : t->data) v = static_cast<T>(rng.normal() * static_cast<double>(stddev));
  return t;
}

// All-ones parameter (norm gains).
template <typename T>
TensorPtr<T> make_ones(std::vector<int> shape) {
  auto t = make_tensor<T>(std::move(shape), true);
  for (auto& v : t->data) v = T(1);
  return t;
}

template <typename T>
T item(const TensorPtr<T>& t) {
  if (!t || t->numel() != 1) throw UsageError("item: tensor is not a scalar");
  return t->data[0];
}

}  // namespace tinydistill
