#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "heavytail/errors.hpp"

namespace heavytail {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense tensor of doubles with an optional same-shape gradient buffer.
// Rank 0 is a scalar holding one value.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (shape_size(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) +
                       " does not hold " + std::to_string(data.size()) +
                       " values");
    }
  }

  static Tensor zeros(Shape s) {
    const std::size_t n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape s, double v) {
    const std::size_t n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor from_vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  static Tensor from_matrix(std::size_t rows, std::size_t cols,
                            std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return shape.empty(); }
  bool is_vector() const { return shape.size() == 1; }
  bool is_matrix() const { return shape.size() == 2; }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double value() const {
    if (!is_scalar()) {
      throw ShapeError("value: tensor " + shape_str(shape) +
                       " is not a scalar");
    }
    return data[0];
  }

  double operator[](std::size_t i) const { return data[i]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols() + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    return data[r * cols() + c];
  }

  void ensure_grad() {
    if (!grad) grad.emplace(data.size(), 0.0);
  }

  void zero_grad() {
    if (grad) {
      std::fill(grad->begin(), grad->end(), 0.0);
    } else {
      grad.emplace(data.size(), 0.0);
    }
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape;
}

}  // namespace heavytail
