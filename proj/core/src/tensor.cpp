#include "dynroute/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "dynroute/errors.hpp"

namespace dynroute {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ConfigError("negative dimension in shape " + shape_to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_to_string(shape_));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor Tensor::batch_slice(int b) const {
  if (shape_.empty() || b < 0 || b >= shape_[0]) {
    throw UsageError("batch_slice index " + std::to_string(b) +
                     " out of range for " + shape_to_string(shape_));
  }
  Shape s = shape_;
  s[0] = 1;
  const std::size_t stride = data_.size() / static_cast<std::size_t>(shape_[0]);
  std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(stride * b),
                        data_.begin() + static_cast<std::ptrdiff_t>(stride * (b + 1)));
  return Tensor(std::move(s), std::move(d));
}

Tensor concat_batch(std::span<const Tensor> samples) {
  if (samples.empty()) throw UsageError("concat_batch of zero tensors");
  Shape s = samples.front().shape();
  std::vector<double> d;
  d.reserve(samples.front().size() * samples.size());
  for (const Tensor& t : samples) {
    if (t.shape() != s || s.empty() || s[0] != 1) {
      throw ConfigError("concat_batch expects equal [1,...] shapes, got " +
                        shape_to_string(t.shape()));
    }
    d.insert(d.end(), t.data().begin(), t.data().end());
  }
  s[0] = static_cast<int>(samples.size());
  return Tensor(std::move(s), std::move(d));
}

}  // namespace dynroute
