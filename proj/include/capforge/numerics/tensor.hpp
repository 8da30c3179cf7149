#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "capforge/numerics/errors.hpp"

namespace capforge {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major float64 array. A scalar has shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    for (auto d : shape_) require(d > 0, "tensor dimensions must be positive");
    data_.assign(shape_size(shape_), fill);
  }
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) require(d > 0, "tensor dimensions must be positive");
    require(shape_size(shape_) == data_.size(),
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const auto n = v.size();
    return Tensor({n}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double item() const {
    require(is_scalar(), "item() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
  }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// A named learnable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    grad.fill(0.0);
  }
};

}  // namespace capforge
