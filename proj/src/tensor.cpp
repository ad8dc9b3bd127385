#include "zsd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "simd.hpp"
#include "zsd/kernels.hpp"

namespace zsd {

Tensor::Tensor(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != static_cast<std::size_t>(r) * c) throw std::invalid_argument("tensor: value count mismatch");
}

Tensor Tensor::from_image(const Image& image) {
  return Tensor(image.height(), image.width(), std::vector<double>(image.pixels().begin(), image.pixels().end()));
}

Image Tensor::to_image() const { return Image(cols, rows, data); }

namespace dense {

namespace {

// c[0..n) += sum over p of a[p] * b[p][0..n), p ascending.
ZSD_SIMD_CLONES
void row_times_matrix(const double* a, int inner, const double* b, int n, double* c) {
  for (int p = 0; p < inner; ++p) {
    const double ap = a[p];
    const double* bp = b + static_cast<std::size_t>(p) * n;
    for (int j = 0; j < n; ++j) c[j] += ap * bp[j];
  }
}

// c[p][0..n) += a[p] * b[0..n) for p in [0, m).
ZSD_SIMD_CLONES
void outer_accumulate(const double* a, int m, const double* b, int n, double* c) {
  for (int p = 0; p < m; ++p) {
    const double ap = a[p];
    double* cp = c + static_cast<std::size_t>(p) * n;
    for (int j = 0; j < n; ++j) cp[j] += ap * b[j];
  }
}

constexpr int kLanes = kernels::detail::kLanes;

// out[0..n) = sum over c of coef[c] * rows[c][0..n), c ascending.
ZSD_SIMD_CLONES
void combine_rows(const double* coef, const double* rows, int d, int n, double* out) {
  std::fill(out, out + n, 0.0);
  for (int c = 0; c < d; ++c) {
    const double a = coef[c];
    const double* r = rows + static_cast<std::size_t>(c) * n;
    for (int j = 0; j < n; ++j) out[j] += a * r[j];
  }
}

ZSD_SIMD_CLONES
double dot_lanes(const double* a, const double* b, int n) {
  double acc[kLanes] = {};
  int j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (int l = 0; l < kLanes; ++l) acc[l] += a[j + l] * b[j + l];
  }
  for (int l = 0; j < n; ++j, ++l) acc[l] += a[j] * b[j];
  return kernels::detail::combine_lanes(acc);
}

// In-place softmax of one row; the sum uses the lane order of dot_lanes.
ZSD_SIMD_CLONES
void softmax_row(double* s, int n) {
  double mx[kLanes];
  std::fill(mx, mx + kLanes, s[0]);
  int j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (int l = 0; l < kLanes; ++l) mx[l] = s[j + l] > mx[l] ? s[j + l] : mx[l];
  }
  for (int l = 0; j < n; ++j, ++l) mx[l] = s[j] > mx[l] ? s[j] : mx[l];
  const double m = *std::max_element(mx, mx + kLanes);

  double acc[kLanes] = {};
  j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (int l = 0; l < kLanes; ++l) {
      s[j + l] = kernels::detail::exp_neg(s[j + l] - m);
      acc[l] += s[j + l];
    }
  }
  for (int l = 0; j < n; ++j, ++l) {
    s[j] = kernels::detail::exp_neg(s[j] - m);
    acc[l] += s[j];
  }
  const double inv = 1.0 / kernels::detail::combine_lanes(acc);
  for (j = 0; j < n; ++j) s[j] *= inv;
}

// c[0..d)[j0..j1) += a[c] * b[j0..j1) for every row i, i ascending, with
// c stored transposed (d x n).
ZSD_SIMD_CLONES
void transposed_accumulate(const Tensor& rows_a, const Tensor& coef, int j0, int j1, double* ct) {
  const int n = rows_a.cols, d = coef.cols;
  for (int i = 0; i < rows_a.rows; ++i) {
    const double* a = rows_a.data.data() + static_cast<std::size_t>(i) * n;
    const double* q = coef.data.data() + static_cast<std::size_t>(i) * d;
    for (int c = 0; c < d; ++c) {
      const double qc = q[c];
      double* out = ct + static_cast<std::size_t>(c) * n;
      for (int j = j0; j < j1; ++j) out[j] += qc * a[j];
    }
  }
}

// M^T C for M (n x n) and C (n x d), blocked over output rows.
Tensor skinny_tn(const Tensor& m, const Tensor& c) {
  const int n = m.cols, d = c.cols;
  std::vector<double> ct(static_cast<std::size_t>(d) * n, 0.0);
  constexpr int kBlock = 128;
  const int nblocks = (n + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < nblocks; ++b) transposed_accumulate(m, c, b * kBlock, std::min(n, (b + 1) * kBlock), ct.data());
  Tensor out(n, d);
  for (int c2 = 0; c2 < d; ++c2) {
    for (int j = 0; j < n; ++j) out(j, c2) = ct[static_cast<std::size_t>(c2) * n + j];
  }
  return out;
}

}  // namespace

// Every product accumulates over the inner index in ascending order, so
// matmul_nt and matmul_tn agree bit-for-bit with matmul on explicit transposes.
Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  Tensor c(a.rows, b.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < a.rows; ++i) {
    row_times_matrix(a.data.data() + static_cast<std::size_t>(i) * a.cols, a.cols, b.data.data(), b.cols,
                     c.data.data() + static_cast<std::size_t>(i) * c.cols);
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dimensions differ");
  return matmul(a, transpose(b));
}

Tensor transpose(const Tensor& a) {
  Tensor t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  }
  return t;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dimensions differ");
  Tensor c(a.cols, b.cols);
  // Threads own disjoint row blocks of c and each walks the shared inner index in order.
  constexpr int kBlock = 64;
  const int nblocks = (a.cols + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < nblocks; ++blk) {
    const int p0 = blk * kBlock, p1 = std::min(a.cols, p0 + kBlock);
    for (int i = 0; i < a.rows; ++i) {
      const double* ai = a.data.data() + static_cast<std::size_t>(i) * a.cols;
      const double* bi = b.data.data() + static_cast<std::size_t>(i) * b.cols;
      outer_accumulate(ai + p0, p1 - p0, bi, b.cols, c.data.data() + static_cast<std::size_t>(p0) * c.cols);
    }
  }
  return c;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < logits.rows; ++i) softmax_row(out.row(i).data(), logits.cols);
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* weights) {
  if (!q.same_shape(k) || k.rows != v.rows) throw std::invalid_argument("attention: shape mismatch");
  const int n = k.rows, d = q.cols, dv = v.cols;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Tensor kt = transpose(k), vt = transpose(v);
  Tensor out(q.rows, dv);
  Tensor a;
  if (weights) a = Tensor(q.rows, n);
#pragma omp parallel
  {
    std::vector<double> row(weights ? 0 : n);
#pragma omp for schedule(static)
    for (int i = 0; i < q.rows; ++i) {
      double* s = weights ? a.row(i).data() : row.data();
      combine_rows(q.row(i).data(), kt.data.data(), d, n, s);
      for (int j = 0; j < n; ++j) s[j] *= scale;
      softmax_row(s, n);
      for (int c = 0; c < dv; ++c) out(i, c) = dot_lanes(s, vt.row(c).data(), n);
    }
  }
  if (weights) *weights = std::move(a);
  return out;
}

AttentionGrads attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& weights,
                                  const Tensor& grad_out) {
  const int n = k.rows, d = q.cols;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Tensor kt = transpose(k), vt = transpose(v);
  AttentionGrads g;
  g.v = skinny_tn(weights, grad_out);
  // dS = A (dA - rowsum(dA A)) / sqrt(d) with dA = dO V^T
  Tensor ds(q.rows, n);
  g.q = Tensor(q.rows, d);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < q.rows; ++i) {
    double* dsi = ds.row(i).data();
    const double* ai = weights.row(i).data();
    combine_rows(grad_out.row(i).data(), vt.data.data(), v.cols, n, dsi);
    const double dot = dot_lanes(dsi, ai, n);
    for (int j = 0; j < n; ++j) dsi[j] = ai[j] * (dsi[j] - dot) * scale;
    for (int c = 0; c < d; ++c) g.q(i, c) = dot_lanes(dsi, kt.row(c).data(), n);
  }
  g.k = skinny_tn(ds, q);
  return g;
}

}  // namespace dense

}  // namespace zsd
