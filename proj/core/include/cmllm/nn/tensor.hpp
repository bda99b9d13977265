#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "cmllm/error.hpp"

namespace cmllm::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Rank-1 tensors view as a single row; rank-3 tensors
/// [B, S, D] view batch item b as an S x D matrix.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), T(0)) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw InputError("tensor data length does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor from_matrix(const Mat<T>& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.matrix() = m;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// 2-D view: rank 2 as-is, rank 1 as a row, higher ranks flatten leading dims.
  MatMap<T> matrix() { return MatMap<T>(data_.data(), rows(), cols()); }
  ConstMatMap<T> matrix() const { return ConstMatMap<T>(data_.data(), rows(), cols()); }

  /// Batch item `b` of a rank-3 tensor as an S x D matrix.
  MatMap<T> slice(std::size_t b) {
    check_rank3();
    return MatMap<T>(data_.data() + b * shape_[1] * shape_[2], static_cast<Eigen::Index>(shape_[1]),
                     static_cast<Eigen::Index>(shape_[2]));
  }
  ConstMatMap<T> slice(std::size_t b) const {
    check_rank3();
    return ConstMatMap<T>(data_.data() + b * shape_[1] * shape_[2], static_cast<Eigen::Index>(shape_[1]),
                          static_cast<Eigen::Index>(shape_[2]));
  }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Eigen::Index rows() const {
    if (shape_.empty()) return 1;
    if (shape_.size() == 1) return 1;
    return static_cast<Eigen::Index>(shape_size(shape_) / shape_.back());
  }
  Eigen::Index cols() const { return shape_.empty() ? 1 : static_cast<Eigen::Index>(shape_.back()); }
  void check_rank3() const {
    if (shape_.size() != 3) throw InputError("slice() needs a rank-3 tensor, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace cmllm::nn
