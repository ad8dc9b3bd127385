#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "zsd/image.hpp"

namespace zsd {

/// Dense row-major matrix of doubles. Images travel as height x width tensors.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}
  Tensor(int r, int c, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Tensor&) const = default;

  static Tensor from_image(const Image& image);
  Image to_image() const;
};

namespace dense {

/// C = A B
Tensor matmul(const Tensor& a, const Tensor& b);
/// C = A B^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// C = A^T B
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Row-wise numerically stable softmax.
Tensor softmax_rows(const Tensor& logits);

/// softmax(Q K^T / sqrt(d)) V. `weights` receives the softmax matrix when non-null.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* weights = nullptr);

struct AttentionGrads {
  Tensor q, k, v;
};
/// Gradients of attention given its softmax matrix and d(loss)/d(output).
AttentionGrads attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& weights,
                                  const Tensor& grad_out);

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

}  // namespace dense

}  // namespace zsd
