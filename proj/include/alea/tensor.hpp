#ifndef ALEA_TENSOR_HPP
#define ALEA_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace alea {

/// Raised when a computation produces or receives non-finite values.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

/// Dense n-dimensional array of doubles, row-major.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), v_(std::move(values)) {
    if (shape_size(shape_) != v_.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape_) +
                                  " does not match value count " + std::to_string(v_.size()));
    for (std::size_t d : shape_)
      if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape shape, double value) {
    std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return v_.size(); }
  bool is_scalar() const { return v_.size() == 1; }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  // 2-d accessors
  std::size_t rows() const { require_2d(); return shape_[0]; }
  std::size_t cols() const { require_2d(); return shape_[1]; }
  double& at(std::size_t r, std::size_t c) { require_2d(); return v_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { require_2d(); return v_[r * shape_[1] + c]; }

  std::vector<double>& values() { return v_; }
  const std::vector<double>& values() const { return v_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && v_ == o.v_; }

 private:
  void require_2d() const {
    if (shape_.size() != 2)
      throw std::invalid_argument("tensor: expected 2-d tensor, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> v_;
};

}  // namespace alea

#endif  // ALEA_TENSOR_HPP
