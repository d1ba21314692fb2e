#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sepipe/errors.hpp"

namespace sepipe {

// Dense row-major tensor. Immutable by convention once handed to a graph.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;
  bool requires_grad = false;

  TensorT() = default;
  TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel() != static_cast<std::int64_t>(data.size()))
      throw DimensionError("tensor data size " + std::to_string(data.size()) +
                           " does not match shape " + shape_str());
  }

  static TensorT zeros(std::vector<int> s) {
    std::int64_t n = numel_of(s);
    return TensorT(std::move(s), std::vector<T>(static_cast<std::size_t>(n), T(0)));
  }

  static TensorT full(std::vector<int> s, T v) {
    std::int64_t n = numel_of(s);
    return TensorT(std::move(s), std::vector<T>(static_cast<std::size_t>(n), v));
  }

  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  std::int64_t numel() const { return numel_of(shape); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  T& at(std::size_t i) { return data[i]; }
  T at(std::size_t i) const { return data[i]; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.requires_grad = requires_grad;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace sepipe
