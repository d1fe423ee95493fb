#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace spurscan {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape) noexcept;
std::string shape_to_string(const Shape& shape);

/// Dense row-major float tensor.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(element_count(shape), 0.0f) {}
  Tensor(Shape s, std::vector<float> values);

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i) const;

  bool all_finite() const noexcept;
  void fill(float v);

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Sum of a[i]*b[i] accumulated in double.
double dot(std::span<const float> a, std::span<const float> b) noexcept;
double dot(std::span<const float> a, std::span<const double> b) noexcept;

}  // namespace spurscan
