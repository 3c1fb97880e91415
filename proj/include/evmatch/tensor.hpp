#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace evmatch {

// All-purpose error type; message carries the failing site.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

using Shape = std::vector<int64_t>;

// 64-byte-aligned storage. Eigen's vectorized kernels peel loops based on
// runtime pointer alignment; a fixed allocation alignment makes results
// bit-reproducible across identical calls.
template <typename T, std::size_t Align>
struct AlignedAllocator {
  using value_type = T;
  template <class U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t(Align)); }
  template <class U>
  bool operator==(const AlignedAllocator<U, Align>&) const {
    return true;
  }
};

using DVec = std::vector<double, AlignedAllocator<double, 64>>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major double tensor. The last dimension is the "column"
// dimension for all matrix-style ops; leading dimensions are flattened
// into rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
    for (int64_t d : shape_) require(d >= 0, "Tensor: negative dim " + shape_str(shape_));
  }
  Tensor(Shape shape, std::initializer_list<double> data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    require(static_cast<int64_t>(data_.size()) == shape_numel(shape_),
            "Tensor: data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool defined() const { return !shape_.empty() || !data_.empty(); }

  // Matrix view: rows = product of leading dims, cols = last dim.
  int64_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  int64_t rows() const { return shape_.empty() ? 0 : numel() / std::max<int64_t>(1, cols()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  DVec& vec() { return data_; }
  const DVec& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  double at2(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  double& at3(int64_t a, int64_t b, int64_t c) {
    return data_[static_cast<size_t>((a * dim(1) + b) * dim(2) + c)];
  }
  double at3(int64_t a, int64_t b, int64_t c) const {
    return data_[static_cast<size_t>((a * dim(1) + b) * dim(2) + c)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor reshaped(Shape s) const {
    require(shape_numel(s) == numel(),
            "reshape: numel mismatch " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

 private:
  Shape shape_;
  DVec data_;
};

using EigenRowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenRowMat>;
using ConstMatMap = Eigen::Map<const EigenRowMat>;

inline MatMap as_matrix(Tensor& t) { return MatMap(t.data(), t.rows(), t.cols()); }
inline ConstMatMap as_matrix(const Tensor& t) { return ConstMatMap(t.data(), t.rows(), t.cols()); }

// C = A * B on the flattened matrix views (Eigen-backed kernel).
inline Tensor matmul_values(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul: inner dims " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  Tensor c({a.rows(), b.cols()});
  as_matrix(c).noalias() = as_matrix(a) * as_matrix(b);
  return c;
}

}  // namespace evmatch
