#include "zsd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "zsd/kernels.hpp"

namespace zsd::ad {

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw std::invalid_argument("scalar() on a non-scalar variable");
  return v.data[0];
}

Var Tape::push(Tensor value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(backward), requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) { return push(std::move(value), true, nullptr); }
Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::record(std::string_view primitive, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  for (double x : value.data) {
    if (!std::isfinite(x)) throw NumericError(std::string(primitive));
  }
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw std::invalid_argument("variable from a different tape");
    needs = needs || nodes_[in.id_].requires_grad;
  }
  return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
}

void Tape::accumulate(Var target, std::span<const double> grad) {
  Node& n = nodes_.at(target.id_);
  if (!n.requires_grad) return;
  if (grad.size() != n.value.size()) throw std::logic_error("gradient shape mismatch");
  if (n.grad.size() != n.value.size()) {
    n.grad = Tensor(n.value.rows, n.value.cols, std::vector<double>(grad.begin(), grad.end()));
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) n.grad.data[i] += grad[i];
}

void Tape::accumulate(Var target, const Tensor& grad) { accumulate(target, std::span<const double>(grad.data)); }

void Tape::accumulate(Var target, Tensor&& grad) {
  Node& n = nodes_.at(target.id_);
  if (n.requires_grad && n.grad.size() != n.value.size() && grad.same_shape(n.value)) {
    n.grad = std::move(grad);
    return;
  }
  accumulate(target, std::span<const double>(grad.data));
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id_);
  if (n.grad.size() == n.value.size()) return n.grad;
  return Tensor(n.value.rows, n.value.cols);
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw std::invalid_argument("root from a different tape");
  if (nodes_.at(root.id_).value.size() != 1) throw std::invalid_argument("backward needs a scalar root");
  for (auto& n : nodes_) n.grad = Tensor{};
  if (!nodes_[root.id_].requires_grad) return;
  nodes_[root.id_].grad = Tensor(1, 1, 1.0);
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() != n.value.size()) continue;
    for (double g : n.grad.data) {
      if (!std::isfinite(g)) throw NumericError("backward");
    }
    n.backward(n.grad);
  }
}

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (!a.value().same_shape(b.value())) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Tensor map_values(const Tensor& x, auto fn) {
  Tensor out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = fn(x.data[i]);
  return out;
}

}  // namespace

Var slice(Var flat, std::size_t offset, int rows, int cols) {
  const auto& src = flat.value().data;
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (offset + n > src.size()) throw std::out_of_range("slice past the end of the parameter vector");
  Tensor out(rows, cols, std::vector<double>(src.begin() + offset, src.begin() + offset + n));
  const std::size_t total = src.size();
  return flat.tape().record("slice", std::move(out), {flat}, [flat, offset, total](const Tensor& g) {
    std::vector<double> full(total, 0.0);
    std::copy(g.data.begin(), g.data.end(), full.begin() + offset);
    flat.tape().accumulate(flat, full);
  });
}

Var reshape(Var x, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != x.value().size()) throw std::invalid_argument("reshape: size mismatch");
  Tensor out(rows, cols, x.value().data);
  return x.tape().record("reshape", std::move(out), {x}, [x](const Tensor& g) { x.tape().accumulate(x, g.data); });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return a.tape().record("add", std::move(out), {a, b}, [a, b](const Tensor& g) {
    a.tape().accumulate(a, g);
    b.tape().accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](const Tensor& g) {
    a.tape().accumulate(a, g);
    Tensor neg = map_values(g, [](double v) { return -v; });
    b.tape().accumulate(b, neg);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tensor ga(g.rows, g.cols), gb(g.rows, g.cols);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data[i] = g.data[i] * b.value().data[i];
      gb.data[i] = g.data[i] * a.value().data[i];
    }
    a.tape().accumulate(a, ga);
    b.tape().accumulate(b, gb);
  });
}

Var scale(Var a, double factor) {
  Tensor out = map_values(a.value(), [factor](double v) { return v * factor; });
  return a.tape().record("scale", std::move(out), {a}, [a, factor](const Tensor& g) {
    a.tape().accumulate(a, map_values(g, [factor](double v) { return v * factor; }));
  });
}

Var add_scalar(Var x, Var s) {
  if (s.value().size() != 1) throw std::invalid_argument("add_scalar: expected a 1x1 operand");
  const double c = s.value().data[0];
  Tensor out = map_values(x.value(), [c](double v) { return v + c; });
  return x.tape().record("add_scalar", std::move(out), {x, s}, [x, s](const Tensor& g) {
    x.tape().accumulate(x, g);
    double total = 0.0;
    for (double v : g.data) total += v;
    s.tape().accumulate(s, Tensor(1, 1, total));
  });
}

Var abs(Var a) {
  Tensor out = map_values(a.value(), [](double v) { return std::abs(v); });
  return a.tape().record("abs", std::move(out), {a}, [a](const Tensor& g) {
    Tensor ga(g.rows, g.cols);
    const auto& x = a.value().data;
    // Subgradient 0 at the kink.
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] = x[i] > 0.0 ? g.data[i] : (x[i] < 0.0 ? -g.data[i] : 0.0);
    a.tape().accumulate(a, ga);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape().record("sum", Tensor(1, 1, s), {a}, [a](const Tensor& g) {
    a.tape().accumulate(a, Tensor(a.rows(), a.cols(), g.data[0]));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape().record("mean", Tensor(1, 1, s / n), {a}, [a, n](const Tensor& g) {
    a.tape().accumulate(a, Tensor(a.rows(), a.cols(), g.data[0] / n));
  });
}

Var l1_mean(Var a, Var b) { return mean(abs(sub(a, b))); }

Var matmul(Var a, Var b) {
  Tensor out = dense::matmul(a.value(), b.value());
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (a.requires_grad()) a.tape().accumulate(a, dense::matmul_nt(g, b.value()));
    if (b.requires_grad()) b.tape().accumulate(b, dense::matmul_tn(a.value(), g));
  });
}

Var attention(Var q, Var k, Var v) {
  auto weights = std::make_shared<Tensor>();
  Tensor out = dense::attention(q.value(), k.value(), v.value(), weights.get());
  return q.tape().record("attention", std::move(out), {q, k, v}, [q, k, v, weights](const Tensor& g) {
    auto grads = dense::attention_backward(q.value(), k.value(), v.value(), *weights, g);
    if (q.requires_grad()) q.tape().accumulate(q, std::move(grads.q));
    if (k.requires_grad()) k.tape().accumulate(k, std::move(grads.k));
    if (v.requires_grad()) v.tape().accumulate(v, std::move(grads.v));
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const int n = xv.rows, d = xv.cols;
  if (gamma.value().size() != static_cast<std::size_t>(d) || beta.value().size() != static_cast<std::size_t>(d)) {
    throw std::invalid_argument("layer_norm_rows: gamma/beta length must equal column count");
  }
  auto xhat = std::make_shared<Tensor>(n, d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  Tensor out(n, d);
  const auto& gm = gamma.value().data;
  const auto& bt = beta.value().data;
  for (int i = 0; i < n; ++i) {
    const auto r = xv.row(i);
    double mu = 0.0;
    for (double v : r) mu += v;
    mu /= d;
    double var = 0.0;
    for (double v : r) var += (v - mu) * (v - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (int j = 0; j < d; ++j) {
      const double h = (r[j] - mu) * is;
      (*xhat)(i, j) = h;
      out(i, j) = gm[j] * h + bt[j];
    }
  }
  return x.tape().record("layer_norm", std::move(out), {x, gamma, beta},
                         [x, gamma, beta, xhat, inv_std, n, d](const Tensor& g) {
                           const auto& gm = gamma.value().data;
                           Tensor gx(n, d), gg(1, d), gb(1, d);
                           for (int i = 0; i < n; ++i) {
                             double m1 = 0.0, m2 = 0.0;
                             for (int j = 0; j < d; ++j) {
                               const double dh = g(i, j) * gm[j];
                               m1 += dh;
                               m2 += dh * (*xhat)(i, j);
                               gg.data[j] += g(i, j) * (*xhat)(i, j);
                               gb.data[j] += g(i, j);
                             }
                             m1 /= d;
                             m2 /= d;
                             for (int j = 0; j < d; ++j) {
                               const double dh = g(i, j) * gm[j];
                               gx(i, j) = (*inv_std)[i] * (dh - m1 - (*xhat)(i, j) * m2);
                             }
                           }
                           x.tape().accumulate(x, gx);
                           gamma.tape().accumulate(gamma, gg);
                           beta.tape().accumulate(beta, gb);
                         });
}

Var softplus(Var x) {
  Tensor out = map_values(x.value(), [](double v) { return dense::softplus(v); });
  return x.tape().record("softplus", std::move(out), {x}, [x](const Tensor& g) {
    Tensor gx(g.rows, g.cols);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] = g.data[i] * dense::sigmoid(x.value().data[i]);
    x.tape().accumulate(x, gx);
  });
}

Var clamp_max(Var x, double cap) {
  Tensor out = map_values(x.value(), [cap](double v) { return std::min(v, cap); });
  return x.tape().record("clamp_max", std::move(out), {x}, [x, cap](const Tensor& g) {
    Tensor gx(g.rows, g.cols);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] = x.value().data[i] < cap ? g.data[i] : 0.0;
    x.tape().accumulate(x, gx);
  });
}

Var gather(Var x, std::vector<std::int32_t> index, int rows, int cols) {
  if (index.size() != static_cast<std::size_t>(rows) * cols) throw std::invalid_argument("gather: index count");
  const auto& src = x.value().data;
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= src.size()) throw std::out_of_range("gather index");
    out.data[i] = src[index[i]];
  }
  auto idx = std::make_shared<std::vector<std::int32_t>>(std::move(index));
  return x.tape().record("gather", std::move(out), {x}, [x, idx](const Tensor& g) {
    Tensor gx(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx->size(); ++i) gx.data[(*idx)[i]] += g.data[i];
    x.tape().accumulate(x, gx);
  });
}

Var permute(Var image, const Permutation& perm) { return gather(image, perm, image.rows(), image.cols()); }

Var extract_patches(Var image, int patch) {
  const int h = image.rows(), w = image.cols();
  if (patch <= 0 || h % patch != 0 || w % patch != 0) {
    throw std::invalid_argument("extract_patches: image dims must be divisible by the patch size");
  }
  const int gw = w / patch, gh = h / patch;
  std::vector<std::int32_t> index(static_cast<std::size_t>(h) * w);
  std::size_t i = 0;
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      for (int py = 0; py < patch; ++py) {
        for (int px = 0; px < patch; ++px) index[i++] = (gy * patch + py) * w + gx * patch + px;
      }
    }
  }
  return gather(image, std::move(index), gw * gh, patch * patch);
}

Var downsample(Var image, Downsample which) {
  const int h = image.rows(), w = image.cols();
  if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("downsample: width and height must be even");
  const Tensor& x = image.value();
  Tensor out(h / 2, w / 2);
  for (int j = 0; j < h / 2; ++j) {
    for (int i = 0; i < w / 2; ++i) {
      out(j, i) = which == Downsample::g1 ? 0.5 * (x(2 * j, 2 * i + 1) + x(2 * j + 1, 2 * i))
                                          : 0.5 * (x(2 * j, 2 * i) + x(2 * j + 1, 2 * i + 1));
    }
  }
  return image.tape().record("downsample", std::move(out), {image}, [image, which, h, w](const Tensor& g) {
    Tensor gx(h, w);
    for (int j = 0; j < h / 2; ++j) {
      for (int i = 0; i < w / 2; ++i) {
        const double v = 0.5 * g(j, i);
        if (which == Downsample::g1) {
          gx(2 * j, 2 * i + 1) += v;
          gx(2 * j + 1, 2 * i) += v;
        } else {
          gx(2 * j, 2 * i) += v;
          gx(2 * j + 1, 2 * i + 1) += v;
        }
      }
    }
    image.tape().accumulate(image, gx);
  });
}

Var convolve_separable(Var image, std::vector<double> kernel) {
  const int h = image.rows(), w = image.cols();
  Tensor out(h, w);
  kernels::convolve_separable(image.value().data, w, h, kernel, out.data);
  auto k = std::make_shared<std::vector<double>>(std::move(kernel));
  return image.tape().record("convolve", std::move(out), {image}, [image, k, h, w](const Tensor& g) {
    Tensor gx(h, w);
    kernels::convolve_separable_adjoint(g.data, w, h, *k, gx.data);
    image.tape().accumulate(image, gx);
  });
}

Var bilateral(Var image, Var sigma_r, Var sigma_x, Var sigma_y, int patch, std::vector<int> halfwidth) {
  const int h = image.rows(), w = image.cols();
  auto hw = std::make_shared<std::vector<int>>(std::move(halfwidth));
  const int gw = sigma_r.cols(), gh = sigma_r.rows();
  auto field_of = [=]() {
    return kernels::BilateralField{patch,
                                   gw,
                                   gh,
                                   sigma_r.value().data,
                                   sigma_x.value().data,
                                   sigma_y.value().data,
                                   *hw};
  };
  const bool needs_grad =
      image.requires_grad() || sigma_r.requires_grad() || sigma_x.requires_grad() || sigma_y.requires_grad();
  auto cache = needs_grad ? std::make_shared<kernels::BilateralCache>() : nullptr;
  Tensor out(h, w);
  kernels::bilateral_forward(image.value().data, w, h, field_of(), out.data, cache.get());
  return image.tape().record(
      "bilateral", std::move(out), {image, sigma_r, sigma_x, sigma_y},
      [image, sigma_r, sigma_x, sigma_y, field_of, cache, h, w, gw, gh](const Tensor& g) {
        auto grads = kernels::bilateral_backward(image.value().data, w, h, field_of(), g.data, cache.get());
        image.tape().accumulate(image, grads.image);
        sigma_r.tape().accumulate(sigma_r, Tensor(gh, gw, std::move(grads.sigma_r)));
        sigma_x.tape().accumulate(sigma_x, Tensor(gh, gw, std::move(grads.sigma_x)));
        sigma_y.tape().accumulate(sigma_y, Tensor(gh, gw, std::move(grads.sigma_y)));
      });
}

// ParamVector ----------------------------------------------------------------

const ParamSegment& ParamVector::segment(std::string_view name) const {
  for (const auto& s : layout) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("no parameter segment named '" + std::string(name) + "'");
}

std::size_t ParamVector::append(std::string name, int rows, int cols) {
  const std::size_t offset = values.size();
  layout.push_back(ParamSegment{std::move(name), offset, rows, cols});
  values.resize(offset + static_cast<std::size_t>(rows) * cols, 0.0);
  return offset;
}

GradientEvaluation evaluate_with_gradients(const LossFn& loss_fn, const ParamVector& params) {
  Tape tape;
  Var theta = tape.variable(Tensor(1, static_cast<int>(params.size()), params.values));
  Var loss = loss_fn(tape, theta);
  if (loss.value().size() != 1) throw std::invalid_argument("loss function must return a scalar");
  tape.backward(loss);
  GradientEvaluation out;
  out.loss = loss.scalar();
  out.gradient = tape.grad(theta).data;
  return out;
}

double evaluate_loss(const LossFn& loss_fn, std::span<const double> values) {
  Tape tape;
  Var theta = tape.constant(Tensor(1, static_cast<int>(values.size()), {values.begin(), values.end()}));
  return loss_fn(tape, theta).scalar();
}

std::vector<double> finite_difference_gradient(const LossFn& loss_fn, const ParamVector& params, double epsilon,
                                               std::span<const std::size_t> coordinates) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  std::vector<std::size_t> coords(coordinates.begin(), coordinates.end());
  if (coords.empty()) {
    coords.resize(params.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  }
  std::vector<double> theta = params.values;
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t c : coords) {
    const double orig = theta.at(c);
    theta[c] = orig + epsilon;
    const double up = evaluate_loss(loss_fn, theta);
    theta[c] = orig - epsilon;
    const double down = evaluate_loss(loss_fn, theta);
    theta[c] = orig;
    out.push_back((up - down) / (2.0 * epsilon));
  }
  return out;
}

}  // namespace zsd::ad
