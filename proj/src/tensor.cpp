#include "eface/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "eface/errors.hpp"

namespace eface {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor extent " + shape.str());
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.numel()) {
    throw ShapeError("tensor of shape " + shape.str() + " given " + std::to_string(data_.size()) + " values");
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::batch_item(int n) const {
  Shape s = shape_;
  s.n = 1;
  Tensor out(s);
  std::copy_n(sample(n), s.numel(), out.data());
  return out;
}

Tensor Tensor::stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("cannot stack an empty list");
  Shape s = items.front().shape();
  for (const auto& t : items) {
    if (t.shape() != s || s.n != 1) throw ShapeError("stack requires equal single-sample shapes, got " + t.shape().str());
  }
  s.n = static_cast<int>(items.size());
  Tensor out(s);
  double* dst = out.data();
  for (const auto& t : items) dst = std::copy(t.data_.begin(), t.data_.end(), dst);
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace eface
