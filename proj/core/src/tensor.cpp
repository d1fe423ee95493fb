#include "spurscan/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "spurscan/error.hpp"

namespace spurscan {

std::size_t element_count(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != element_count(shape)) {
    throw Error(ErrorCode::ShapeMismatch, "tensor data length " + std::to_string(data.size()) +
                                              " does not match shape " + shape_to_string(shape));
  }
}

std::span<float> Tensor::row(std::size_t i) {
  const std::size_t stride = shape.empty() ? 0 : data.size() / shape[0];
  return {data.data() + i * stride, stride};
}

std::span<const float> Tensor::row(std::size_t i) const {
  const std::size_t stride = shape.empty() ? 0 : data.size() / shape[0];
  return {data.data() + i * stride, stride};
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

void Tensor::fill(float v) { std::fill(data.begin(), data.end(), v); }

namespace {

template <typename T>
double dot_impl(std::span<const float> a, std::span<const T> b) noexcept {
  // Four independent accumulators; the order is fixed so results are
  // reproducible across runs.
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  const std::size_t n = std::min(a.size(), b.size());
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * b[i];
    s1 += static_cast<double>(a[i + 1]) * b[i + 1];
    s2 += static_cast<double>(a[i + 2]) * b[i + 2];
    s3 += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

double dot(std::span<const float> a, std::span<const float> b) noexcept { return dot_impl(a, b); }
double dot(std::span<const float> a, std::span<const double> b) noexcept { return dot_impl(a, b); }

}  // namespace spurscan
