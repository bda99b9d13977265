#pragma once

#include <random>

#include "cmllm/nn/tensor.hpp"

namespace cmllm::nn {

/// Low-rank update around a frozen d x k weight: W = W0 + scaling * B A,
/// with A (r x k) small random and B (d x r) zero at creation.
template <typename T>
struct LoraAdapter {
  Mat<T> w0;
  Mat<T> a;
  Mat<T> b;
  T scaling = T(1);

  int rank() const { return static_cast<int>(a.rows()); }
  std::size_t trainable_count() const { return static_cast<std::size_t>(a.size() + b.size()); }
  std::size_t frozen_count() const { return static_cast<std::size_t>(w0.size()); }
  Mat<T> merged() const { return w0 + scaling * (b * a); }
};

template <typename T>
LoraAdapter<T> lora_wrap(const Mat<T>& w0, int rank, T scaling, std::mt19937_64& rng) {
  const auto d = static_cast<int>(w0.rows());
  const auto k = static_cast<int>(w0.cols());
  if (rank < 1 || rank > std::min(d, k)) {
    throw InputError("LoRA rank " + std::to_string(rank) + " exceeds min(d, k) = " + std::to_string(std::min(d, k)));
  }
  LoraAdapter<T> ad;
  ad.w0 = w0;
  ad.scaling = scaling;
  ad.a.resize(rank, k);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(k)));
  for (Eigen::Index i = 0; i < ad.a.size(); ++i) ad.a.data()[i] = static_cast<T>(dist(rng));
  ad.b = Mat<T>::Zero(d, rank);
  return ad;
}

/// x (N x k) -> x W0^T + scaling * (x A^T) B^T.
template <typename T>
Mat<T> lora_forward(const LoraAdapter<T>& ad, const Mat<T>& x) {
  if (x.cols() != ad.w0.cols()) throw InputError("lora_forward input width mismatch");
  Mat<T> y(x.rows(), ad.w0.rows());
  y.noalias() = x * ad.w0.transpose();
  const Mat<T> xa = x * ad.a.transpose();
  y.noalias() += ad.scaling * (xa * ad.b.transpose());
  return y;
}

template <typename T>
struct LoraGrads {
  Mat<T> dx;
  Mat<T> da;
  Mat<T> db;
};

/// Gradients for A and B only; W0 is frozen.
template <typename T>
LoraGrads<T> lora_backward(const LoraAdapter<T>& ad, const Mat<T>& x, const Mat<T>& dy) {
  LoraGrads<T> g;
  const Mat<T> xa = x * ad.a.transpose();
  g.db = ad.scaling * (dy.transpose() * xa);
  const Mat<T> dxa = ad.scaling * (dy * ad.b);
  g.da = dxa.transpose() * x;
  g.dx = dy * ad.w0 + dxa * ad.a;
  return g;
}

}  // namespace cmllm::nn
