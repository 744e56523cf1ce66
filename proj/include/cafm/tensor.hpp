#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace cafm {

// Dense row-major array of 64-bit floats. Rank 0 (scalar), 1 or 2 is all the
// library needs. Immutable by convention once handed to a Tape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor from(std::initializer_list<double> values);  // 1-D
  static Tensor zeros_like(const Tensor& t);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool is_scalar() const { return numel() == 1; }

  // 2-D accessors; rows()/cols() require ndim()==2.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  // Throws if any entry is NaN/Inf; `what` names the producing operation.
  void ensure_finite(const std::string& what) const;

  Tensor row(std::size_t i) const;         // [d] copy of row i of a 2-D tensor
  void set_row(std::size_t i, const Tensor& r);
  Tensor reshaped(std::vector<std::size_t> shape) const;  // same numel

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Elementwise arithmetic on plain tensors (shape-checked).
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double c);
Tensor operator*(double c, const Tensor& a);

// C = A @ B for 2-D tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double norm2(const Tensor& a);  // Euclidean norm of all entries

std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace cafm
