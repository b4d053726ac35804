#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace eface {

// NCHW extents. Every tensor in the library is four-dimensional; scalars are 1x1x1x1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor {
 public:
  Tensor() : shape_{0, 0, 0, 0} {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  double* plane(int n, int c) { return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane(); }
  const double* plane(int n, int c) const {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
  }
  double* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.plane(); }
  const double* sample(int n) const { return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.plane(); }

  void fill(double v);
  bool all_finite() const;

  // Copy of sample n as a batch of one.
  Tensor batch_item(int n) const;
  // Stack equally shaped single-sample tensors along the batch axis.
  static Tensor stack(std::span<const Tensor> items);

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace eface
