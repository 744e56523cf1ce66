#include "cafm/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cafm {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

using MatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MatMapMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("Tensor: data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::zeros_like(const Tensor& t) { return Tensor(t.shape_); }

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw std::logic_error("Tensor::rows: tensor is not 2-D, shape " + shape_str());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw std::logic_error("Tensor::cols: tensor is not 2-D, shape " + shape_str());
  return shape_[1];
}

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::ensure_finite(const std::string& what) const {
  if (!all_finite()) {
    throw std::runtime_error("non-finite value produced by " + what + " (shape " + shape_str() + ")");
  }
}

Tensor Tensor::row(std::size_t i) const {
  const std::size_t c = cols();
  if (i >= rows()) throw std::out_of_range("Tensor::row: index " + std::to_string(i));
  Tensor r({c});
  std::copy(data_.begin() + i * c, data_.begin() + (i + 1) * c, r.data_.begin());
  return r;
}

void Tensor::set_row(std::size_t i, const Tensor& r) {
  const std::size_t c = cols();
  if (r.numel() != c) {
    throw std::invalid_argument("Tensor::set_row: row size " + std::to_string(r.numel()) +
                                " != cols " + std::to_string(c));
  }
  std::copy(r.data_.begin(), r.data_.end(), data_.begin() + i * c);
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_numel(shape) != numel()) {
    throw std::invalid_argument("Tensor::reshaped: cannot reshape " + shape_str() + " to " +
                                shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "tensor add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "tensor sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "tensor mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

Tensor operator*(const Tensor& a, double c) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return out;
}

Tensor operator*(double c, const Tensor& a) { return a * c; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw std::invalid_argument("matmul: expects 2-D tensors, got " + a.shape_str() + " and " +
                                b.shape_str());
  }
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ, " + a.shape_str() + " @ " +
                                b.shape_str());
  }
  Tensor out({a.rows(), b.cols()});
  MatMap ma(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
  MatMap mb(b.data(), static_cast<Eigen::Index>(b.rows()), static_cast<Eigen::Index>(b.cols()));
  MatMapMut mo(out.data(), static_cast<Eigen::Index>(out.rows()),
               static_cast<Eigen::Index>(out.cols()));
  mo.noalias() = ma * mb;
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  return std::inner_product(a.storage().begin(), a.storage().end(), b.storage().begin(), 0.0);
}

double sum(const Tensor& a) {
  return std::accumulate(a.storage().begin(), a.storage().end(), 0.0);
}

double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

}  // namespace cafm
