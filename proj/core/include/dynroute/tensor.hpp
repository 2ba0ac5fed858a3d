#ifndef DYNROUTE_TENSOR_HPP_
#define DYNROUTE_TENSOR_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dynroute {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major float64 array. A rank-0 tensor (empty shape) holds one
// scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors for B x C x H x W maps.
  double& at(int b, int c, int h, int w) {
    return data_[offset4(b, c, h, w)];
  }
  double at(int b, int c, int h, int w) const {
    return data_[offset4(b, c, h, w)];
  }

  double item() const { return data_.front(); }
  void fill(double v);
  bool all_finite() const;

  // Copy of sample `b` along the leading dimension, keeping a batch of one.
  Tensor batch_slice(int b) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::size_t offset4(int b, int c, int h, int w) const {
    return ((static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + h) *
               shape_[3] +
           w;
  }

  Shape shape_;
  std::vector<double> data_;
};

// Stacks equally shaped single-sample tensors (leading dim 1) into a batch.
Tensor concat_batch(std::span<const Tensor> samples);

}  // namespace dynroute

#endif  // DYNROUTE_TENSOR_HPP_
