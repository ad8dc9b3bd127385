#pragma once

// Tensor-level reverse-mode differentiation over the fixed primitive set
// this pipeline is built from. Each primitive records its output value and
// a closure that maps the output gradient onto its inputs.

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "zsd/signal.hpp"
#include "zsd/tensor.hpp"

namespace zsd::ad {

/// A primitive produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(std::string primitive)
      : std::runtime_error("non-finite value produced by '" + primitive + "'"), primitive_(std::move(primitive)) {}
  const std::string& primitive() const { return primitive_; }

 private:
  std::string primitive_;
};

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  int rows() const { return value().rows; }
  int cols() const { return value().cols; }
  double scalar() const;
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Tensor value);
  Var constant(Tensor value);

  /// Adds a primitive's output. The closure is dropped when no input needs
  /// a gradient, so constant sub-graphs cost a forward pass only.
  Var record(std::string_view primitive, Tensor value, std::initializer_list<Var> inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and runs all closures in reverse order.
  void backward(Var root);

  void accumulate(Var target, const Tensor& grad);
  void accumulate(Var target, Tensor&& grad);
  void accumulate(Var target, std::span<const double> grad);

  const Tensor& value(Var v) const { return nodes_.at(v.id_).value; }
  /// Zero tensor of the right shape when nothing flowed into v.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id_).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };
  Var push(Tensor value, bool requires_grad, Backward backward);
  std::deque<Node> nodes_;
};

// Primitives ---------------------------------------------------------------

Var slice(Var flat, std::size_t offset, int rows, int cols);
Var reshape(Var x, int rows, int cols);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// x + s for a 1x1 s broadcast over x.
Var add_scalar(Var x, Var s);
Var abs(Var a);
Var sum(Var a);
Var mean(Var a);
/// mean |a - b|
Var l1_mean(Var a, Var b);

Var matmul(Var a, Var b);
Var attention(Var q, Var k, Var v);
/// Per-row normalization over columns, then gamma * xhat + beta (gamma, beta are 1 x cols).
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps);
Var softplus(Var x);
Var clamp_max(Var x, double cap);

/// out.data[i] = x.data[index[i]] reshaped to rows x cols.
Var gather(Var x, std::vector<std::int32_t> index, int rows, int cols);
Var permute(Var image, const Permutation& perm);
/// Image (H x W) to patch matrix (N x P^2), patches and pixels row-major.
Var extract_patches(Var image, int patch);

enum class Downsample { g1, g2 };
Var downsample(Var image, Downsample which);

Var convolve_separable(Var image, std::vector<double> kernel);

/// Spatially varying bilateral filter. sigma_* are grid_h x grid_w tensors
/// (one value per patch); halfwidth is treated as a constant.
Var bilateral(Var image, Var sigma_r, Var sigma_x, Var sigma_y, int patch, std::vector<int> halfwidth);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

// Parameter vectors and gradient evaluation --------------------------------

struct ParamSegment {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
  bool operator==(const ParamSegment&) const = default;
};

/// Flat vector of learnable scalars with named, stable segment offsets.
struct ParamVector {
  std::vector<double> values;
  std::vector<ParamSegment> layout;

  std::size_t size() const { return values.size(); }
  const ParamSegment& segment(std::string_view name) const;
  std::size_t append(std::string name, int rows, int cols);
  std::span<double> view(const ParamSegment& s) { return {values.data() + s.offset, s.size()}; }
  std::span<const double> view(const ParamSegment& s) const { return {values.data() + s.offset, s.size()}; }
};

struct GradientEvaluation {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Builds a scalar loss on the tape from the flat parameter variable.
using LossFn = std::function<Var(Tape&, Var params)>;

GradientEvaluation evaluate_with_gradients(const LossFn& loss_fn, const ParamVector& params);
double evaluate_loss(const LossFn& loss_fn, std::span<const double> values);

/// Central differences; with an empty coordinate list every coordinate is
/// probed, otherwise element i of the result belongs to coordinates[i].
std::vector<double> finite_difference_gradient(const LossFn& loss_fn, const ParamVector& params, double epsilon,
                                               std::span<const std::size_t> coordinates = {});

}  // namespace zsd::ad
