#include "zsd/kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "zsd/image.hpp"
#include "simd.hpp"

namespace zsd::kernels {

void validate(const BilateralField& field, int width, int height) {
  if (field.patch <= 0 || width % field.patch != 0 || height % field.patch != 0) {
    throw std::invalid_argument("bilateral: image dims must be divisible by the patch size");
  }
  if (field.grid_w != width / field.patch || field.grid_h != height / field.patch) {
    throw std::invalid_argument("bilateral: sigma grid does not match image dims");
  }
  const auto n = static_cast<std::size_t>(field.grid_w) * field.grid_h;
  if (field.sigma_r.size() != n || field.sigma_x.size() != n || field.sigma_y.size() != n ||
      field.halfwidth.size() != n) {
    throw std::invalid_argument("bilateral: sigma map length does not match the patch grid");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(field.sigma_r[i] > 0.0) || !(field.sigma_x[i] > 0.0) || !(field.sigma_y[i] > 0.0)) {
      throw std::invalid_argument("bilateral: sigma must be positive (patch " + std::to_string(i) + ")");
    }
    if (field.halfwidth[i] < 0) throw std::invalid_argument("bilateral: negative half-width");
  }
}

int effective_halfwidth(int k, int width, int height) { return std::min(k, std::max(width, height) - 1); }

namespace {

struct PatchTables {
  std::vector<std::size_t> offset;
  std::vector<double> weights;
};

// Spatial weights depend only on the patch, so each patch gets one
// (2k+1)^2 table evaluated with the same scalar formula as the reference.
PatchTables build_spatial_tables(const BilateralField& field, std::span<const int> halfwidth) {
  const std::size_t n = halfwidth.size();
  PatchTables t;
  t.offset.resize(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t side = 2 * static_cast<std::size_t>(halfwidth[i]) + 1;
    t.offset[i + 1] = t.offset[i] + side * side;
  }
  t.weights.resize(t.offset[n]);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const int k = halfwidth[i];
    const double ix = 1.0 / (2.0 * field.sigma_x[i] * field.sigma_x[i]);
    const double iy = 1.0 / (2.0 * field.sigma_y[i] * field.sigma_y[i]);
    double* w = t.weights.data() + t.offset[i];
    for (int dy = -k; dy <= k; ++dy) {
      for (int dx = -k; dx <= k; ++dx) *w++ = detail::spatial_weight(dx, dy, ix, iy);
    }
  }
  return t;
}

std::vector<int> clipped_halfwidths(const BilateralField& field, int width, int height) {
  std::vector<int> k(field.halfwidth.begin(), field.halfwidth.end());
  for (auto& v : k) v = effective_halfwidth(v, width, height);
  return k;
}

// Rows widened by `pad` zero columns on both sides, with a 0/1 column mask.
// Taps that fall off the image read a zero and get weight * 0, which leaves
// every sum unchanged, so whole windows can run without bounds checks.
struct PaddedRows {
  int width, pad, stride;
  std::vector<double> values, mask;

  PaddedRows(std::span<const double> image, int w, int h, int p)
      : width(w), pad(p), stride(w + 2 * p), values(static_cast<std::size_t>(stride) * h, 0.0), mask(stride, 0.0) {
    for (int y = 0; y < h; ++y) {
      std::copy_n(image.data() + static_cast<std::size_t>(y) * w, w, row(y));
    }
    std::fill_n(mask.data() + pad, w, 1.0);
  }
  double* row(int y) { return values.data() + static_cast<std::size_t>(y) * stride + pad; }
  const double* row(int y) const { return values.data() + static_cast<std::size_t>(y) * stride + pad; }
  const double* mask_row() const { return mask.data() + pad; }
};

struct Geometry {
  const PaddedRows& image;
  int width;
  int height;
  const BilateralField& field;
  const std::vector<int>& halfwidth;
  const PatchTables& tables;
};

// Centers x .. x+G-1 of row y share a patch, so each tap is one contiguous
// load of G neighbors with a single spatial weight. Per center, taps are
// summed serially in (dy, dx) order, the same as the reference.
template <int G>
ZSD_INLINE void filter_group(const Geometry& g, int x, int y, double* out, double* den_out) {
  const int p = g.field.patch_of(x, y);
  const int k = g.halfwidth[p];
  const int side = 2 * k + 1;
  const double ir = 1.0 / (2.0 * g.field.sigma_r[p] * g.field.sigma_r[p]);
  const double* table = g.tables.weights.data() + g.tables.offset[p];
  const double* m = g.image.mask_row() + x;
  double c[G], num[G] = {}, den[G] = {};
  std::copy_n(g.image.row(y) + x, G, c);
  for (int dy = std::max(-k, -y); dy <= std::min(k, g.height - 1 - y); ++dy) {
    const double* r = g.image.row(y + dy) + x;
    const double* t = table + static_cast<std::size_t>(dy + k) * side + k;
    for (int dx = -k; dx <= k; ++dx) {
      const double sw = t[dx];
#pragma omp simd
      for (int l = 0; l < G; ++l) {
        const double v = r[dx + l];
        const double w = sw * detail::range_weight(v - c[l], ir) * m[dx + l];
        num[l] += v * w;
        den[l] += w;
      }
    }
  }
  for (int l = 0; l < G; ++l) {
    out[l] = num[l] / den[l];
    den_out[l] = den[l];
  }
}

struct RowTargets {
  double* out;   // width values
  double* den;   // width values
};

struct RowGrads {
  std::span<const double> grad_out;  // row y of d(loss)/d(out)
  std::span<const double> den, out;  // row y of the forward normalizers and outputs
  PaddedRows& grad;                  // d(loss)/d(image), padded like the image
  double* partial_r;                 // row y of per-pixel sigma partials
  double* partial_x;
  double* partial_y;
};

// d(loss)/d(log w_q) = a (y_q - out) w_q with a = grad_out / den; the rest
// follows from w_q = spatial * exp(-(y_q - y_p)^2 / (2 sigma_r^2)).
template <int G>
ZSD_INLINE void backprop_group(const Geometry& g, int x, int y, RowGrads& rg) {
  const int p = g.field.patch_of(x, y);
  const int k = g.halfwidth[p];
  const int side = 2 * k + 1;
  const double sr = g.field.sigma_r[p];
  const double ir = 1.0 / (2.0 * sr * sr);
  const double inv_sr2 = 1.0 / (sr * sr);
  const double* table = g.tables.weights.data() + g.tables.offset[p];
  const double* m = g.image.mask_row() + x;
  double c[G], a[G], o[G], ar[G] = {}, ax[G] = {}, ay[G] = {}, self[G] = {};
  std::copy_n(g.image.row(y) + x, G, c);
  for (int l = 0; l < G; ++l) {
    a[l] = rg.grad_out[x + l] / rg.den[x + l];
    o[l] = rg.out[x + l];
  }
  for (int dy = std::max(-k, -y); dy <= std::min(k, g.height - 1 - y); ++dy) {
    const double* r = g.image.row(y + dy) + x;
    double* gr = rg.grad.row(y + dy) + x;
    const double* t = table + static_cast<std::size_t>(dy + k) * side + k;
    const double dy2 = static_cast<double>(dy * dy);
    for (int dx = -k; dx <= k; ++dx) {
      const double sw = t[dx];
      const double dx2 = static_cast<double>(dx * dx);
#pragma omp simd
      for (int l = 0; l < G; ++l) {
        const double v = r[dx + l];
        const double diff = v - c[l];
        const double w = sw * detail::range_weight(diff, ir) * m[dx + l];
        const double cw = a[l] * (v - o[l]) * w;
        ar[l] += cw * diff * diff;
        ax[l] += cw * dx2;
        ay[l] += cw * dy2;
        const double tr = cw * diff * inv_sr2;
        gr[dx + l] += a[l] * w - tr;
        self[l] += tr;
      }
    }
  }
  double* gc = rg.grad.row(y) + x;
  for (int l = 0; l < G; ++l) {
    gc[l] += self[l];
    rg.partial_r[x + l] = ar[l];
    rg.partial_x[x + l] = ax[l];
    rg.partial_y[x + l] = ay[l];
  }
}

// Widest lane group that never straddles a patch boundary.
int group_width(int patch) {
  for (int gw : {8, 4, 2}) {
    if (patch % gw == 0) return gw;
  }
  return 1;
}

template <int G>
ZSD_INLINE void forward_row_impl(const Geometry& g, int y, RowTargets t) {
  for (int x = 0; x < g.width; x += G) filter_group<G>(g, x, y, t.out + x, t.den + x);
}

template <int G>
ZSD_INLINE void backward_row_impl(const Geometry& g, int y, RowGrads& rg) {
  for (int x = 0; x < g.width; x += G) backprop_group<G>(g, x, y, rg);
}

ZSD_SIMD_CLONES void forward_row8(const Geometry& g, int y, RowTargets t) { forward_row_impl<8>(g, y, t); }
ZSD_SIMD_CLONES void forward_row4(const Geometry& g, int y, RowTargets t) { forward_row_impl<4>(g, y, t); }
ZSD_SIMD_CLONES void forward_row2(const Geometry& g, int y, RowTargets t) { forward_row_impl<2>(g, y, t); }
ZSD_SIMD_CLONES void forward_row1(const Geometry& g, int y, RowTargets t) { forward_row_impl<1>(g, y, t); }
ZSD_SIMD_CLONES void backward_row8(const Geometry& g, int y, RowGrads& rg) { backward_row_impl<8>(g, y, rg); }
ZSD_SIMD_CLONES void backward_row4(const Geometry& g, int y, RowGrads& rg) { backward_row_impl<4>(g, y, rg); }
ZSD_SIMD_CLONES void backward_row2(const Geometry& g, int y, RowGrads& rg) { backward_row_impl<2>(g, y, rg); }
ZSD_SIMD_CLONES void backward_row1(const Geometry& g, int y, RowGrads& rg) { backward_row_impl<1>(g, y, rg); }

void forward_row(int lanes, const Geometry& g, int y, RowTargets t) {
  switch (lanes) {
    case 8: return forward_row8(g, y, t);
    case 4: return forward_row4(g, y, t);
    case 2: return forward_row2(g, y, t);
    default: return forward_row1(g, y, t);
  }
}

void backward_row(int lanes, const Geometry& g, int y, RowGrads& rg) {
  switch (lanes) {
    case 8: return backward_row8(g, y, rg);
    case 4: return backward_row4(g, y, rg);
    case 2: return backward_row2(g, y, rg);
    default: return backward_row1(g, y, rg);
  }
}

void run_forward(std::span<const double> image, int width, int height, const BilateralField& field,
                 std::span<double> out, std::span<double> den) {
  const auto halfwidth = clipped_halfwidths(field, width, height);
  const auto tables = build_spatial_tables(field, halfwidth);
  const int kmax = *std::max_element(halfwidth.begin(), halfwidth.end());
  const PaddedRows padded(image, width, height, kmax);
  const Geometry geo{padded, width, height, field, halfwidth, tables};
  const int lanes = group_width(field.patch);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    const std::size_t off = static_cast<std::size_t>(y) * width;
    forward_row(lanes, geo, y, {out.data() + off, den.data() + off});
  }
}

}  // namespace

void bilateral_forward(std::span<const double> image, int width, int height, const BilateralField& field,
                       std::span<double> out, BilateralCache* cache) {
  validate(field, width, height);
  const std::size_t npix = static_cast<std::size_t>(width) * height;
  if (image.size() != npix || out.size() != npix) throw std::invalid_argument("bilateral_forward: buffer size mismatch");
  std::vector<double> scratch;
  std::span<double> den;
  if (cache) {
    cache->den.resize(npix);
    den = cache->den;
  } else {
    scratch.resize(npix);
    den = scratch;
  }
  run_forward(image, width, height, field, out, den);
  if (cache) cache->out.assign(out.begin(), out.end());
}

BilateralGrads bilateral_backward(std::span<const double> image, int width, int height,
                                  const BilateralField& field, std::span<const double> grad_out,
                                  const BilateralCache* cache) {
  validate(field, width, height);
  const auto halfwidth = clipped_halfwidths(field, width, height);
  const std::size_t npix = static_cast<std::size_t>(width) * height;
  const std::size_t npatch = field.halfwidth.size();
  const int kmax = *std::max_element(halfwidth.begin(), halfwidth.end());
  if (image.size() != npix || grad_out.size() != npix) {
    throw std::invalid_argument("bilateral_backward: buffer size mismatch");
  }
  if (cache && (cache->den.size() != npix || cache->out.size() != npix)) {
    throw std::invalid_argument("bilateral_backward: cache does not match the image");
  }
  BilateralCache local;
  if (!cache) {
    std::vector<double> out(npix);
    bilateral_forward(image, width, height, field, out, &local);
    cache = &local;
  }
  const auto tables = build_spatial_tables(field, halfwidth);
  const PaddedRows padded(image, width, height, kmax);
  const Geometry geo{padded, width, height, field, halfwidth, tables};
  const int lanes = group_width(field.patch);

  PaddedRows grad(std::vector<double>(npix, 0.0), width, height, kmax);
  std::vector<double> pr(npix), px(npix), py(npix);

  // Centers in one band scatter into rows [band - kmax, band + kmax]. Bands
  // of height >= 2*kmax processed in two alternating phases never overlap,
  // and each band runs serially, so the summation order is fixed.
  const int band = std::max(2 * kmax, 1);
  const int nbands = (height + band - 1) / band;
  for (int phase = 0; phase < 2; ++phase) {
#pragma omp parallel for schedule(dynamic, 1)
    for (int b = phase; b < nbands; b += 2) {
      const int yb1 = std::min(height, (b + 1) * band);
      for (int y = b * band; y < yb1; ++y) {
        const std::size_t off = static_cast<std::size_t>(y) * width;
        const auto row = [&](const std::vector<double>& v) {
          return std::span<const double>(v.data() + off, static_cast<std::size_t>(width));
        };
        RowGrads rg{grad_out.subspan(off, width), row(cache->den), row(cache->out), grad,
                    pr.data() + off,           px.data() + off, py.data() + off};
        backward_row(lanes, geo, y, rg);
      }
    }
  }

  BilateralGrads g;
  g.image.resize(npix);
  for (int y = 0; y < height; ++y) std::copy_n(grad.row(y), width, g.image.data() + static_cast<std::size_t>(y) * width);
  g.sigma_r.assign(npatch, 0.0);
  g.sigma_x.assign(npatch, 0.0);
  g.sigma_y.assign(npatch, 0.0);
  const int P = field.patch;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(npatch); ++p) {
    const int gx = static_cast<int>(p % field.grid_w), gy = static_cast<int>(p / field.grid_w);
    double sr = 0.0, sx = 0.0, sy = 0.0;
    for (int y = gy * P; y < (gy + 1) * P; ++y) {
      for (int x = gx * P; x < (gx + 1) * P; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * width + x;
        sr += pr[i];
        sx += px[i];
        sy += py[i];
      }
    }
    const double r = field.sigma_r[p], xs = field.sigma_x[p], ys = field.sigma_y[p];
    g.sigma_r[p] = sr / (r * r * r);
    g.sigma_x[p] = sx / (xs * xs * xs);
    g.sigma_y[p] = sy / (ys * ys * ys);
  }
  return g;
}

namespace {

void check_conv_args(std::size_t n_in, std::size_t n_out, int width, int height, std::span<const double> kernel) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("convolve: bad dims");
  const auto n = static_cast<std::size_t>(width) * height;
  if (n_in != n || n_out != n) throw std::invalid_argument("convolve: buffer size mismatch");
  if (kernel.size() % 2 != 1) throw std::invalid_argument("convolve: kernel length must be odd");
}

// For every destination index s in [0,n), the (source, tap) pairs whose
// reflected tap lands on s, listed in ascending source then tap order.
// The vertical adjoint gathers, per output row s, every (source row, tap)
// that reads row s under reflection.
struct AdjointTaps {
  std::vector<std::size_t> start;
  std::vector<int> source;
  std::vector<int> tap;
};

AdjointTaps build_adjoint_taps(int n, int radius) {
  std::vector<std::vector<std::pair<int, int>>> lists(n);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t <= 2 * radius; ++t) lists[reflect_index(i + t - radius, n)].emplace_back(i, t);
  }
  AdjointTaps a;
  a.start.resize(n + 1, 0);
  for (int s = 0; s < n; ++s) a.start[s + 1] = a.start[s] + lists[s].size();
  a.source.reserve(a.start[n]);
  a.tap.reserve(a.start[n]);
  for (const auto& l : lists) {
    for (auto [i, t] : l) {
      a.source.push_back(i);
      a.tap.push_back(t);
    }
  }
  return a;
}

ZSD_SIMD_CLONES
void axpy(double a, const double* x, int n, double* y) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// dst[x] = sum over t ascending of kernel[t] * padded[x + t].
ZSD_SIMD_CLONES
void correlate_row(const double* padded, int width, const double* kernel, int taps, double* dst) {
  std::fill(dst, dst + width, 0.0);
  for (int t = 0; t < taps; ++t) {
    const double kt = kernel[t];
    const double* src = padded + t;
    for (int x = 0; x < width; ++x) dst[x] += kt * src[x];
  }
}

// Transpose of correlate_row: padded[x + t] += kernel[t] * src[x].
ZSD_SIMD_CLONES
void scatter_row(const double* src, int width, const double* kernel, int taps, double* padded) {
  for (int t = 0; t < taps; ++t) {
    const double kt = kernel[t];
    double* dst = padded + t;
    for (int x = 0; x < width; ++x) dst[x] += kt * src[x];
  }
}

}  // namespace

void convolve_separable(std::span<const double> in, int width, int height, std::span<const double> kernel,
                        std::span<double> out) {
  check_conv_args(in.size(), out.size(), width, height, kernel);
  const int r = static_cast<int>(kernel.size() / 2);
  const int taps = static_cast<int>(kernel.size());
  std::vector<double> tmp(in.size());

  std::vector<int> xmap(static_cast<std::size_t>(width) + 2 * r);
  for (int j = 0; j < width + 2 * r; ++j) xmap[j] = reflect_index(j - r, width);

#pragma omp parallel
  {
    std::vector<double> padded(xmap.size());
#pragma omp for schedule(static)
    for (int y = 0; y < height; ++y) {
      const double* src = in.data() + static_cast<std::size_t>(y) * width;
      for (std::size_t j = 0; j < padded.size(); ++j) padded[j] = src[xmap[j]];
      correlate_row(padded.data(), width, kernel.data(), taps, tmp.data() + static_cast<std::size_t>(y) * width);
    }
  }

#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    double* dst = out.data() + static_cast<std::size_t>(y) * width;
    std::fill(dst, dst + width, 0.0);
    for (int t = 0; t < taps; ++t) {
      const double* src = tmp.data() + static_cast<std::size_t>(reflect_index(y + t - r, height)) * width;
      axpy(kernel[t], src, width, dst);
    }
  }
}

void convolve_separable_adjoint(std::span<const double> grad_out, int width, int height,
                                std::span<const double> kernel, std::span<double> grad_in) {
  check_conv_args(grad_out.size(), grad_in.size(), width, height, kernel);
  const int r = static_cast<int>(kernel.size() / 2);
  const int taps = static_cast<int>(kernel.size());
  const auto rows = build_adjoint_taps(height, r);
  std::vector<double> tmp(grad_out.size());

  // Adjoint of the vertical pass.
#pragma omp parallel for schedule(static)
  for (int s = 0; s < height; ++s) {
    double* dst = tmp.data() + static_cast<std::size_t>(s) * width;
    std::fill(dst, dst + width, 0.0);
    for (std::size_t e = rows.start[s]; e < rows.start[s + 1]; ++e) {
      axpy(kernel[rows.tap[e]], grad_out.data() + static_cast<std::size_t>(rows.source[e]) * width, width, dst);
    }
  }

  // Adjoint of the horizontal pass: scatter into the padded row, then fold
  // the padding back through the reflection.
#pragma omp parallel
  {
    std::vector<double> padded(static_cast<std::size_t>(width) + 2 * r);
#pragma omp for schedule(static)
    for (int y = 0; y < height; ++y) {
      std::fill(padded.begin(), padded.end(), 0.0);
      scatter_row(tmp.data() + static_cast<std::size_t>(y) * width, width, kernel.data(), taps, padded.data());
      double* dst = grad_in.data() + static_cast<std::size_t>(y) * width;
      std::copy_n(padded.data() + r, width, dst);
      for (int j = 0; j < r; ++j) dst[reflect_index(j - r, width)] += padded[j];
      for (int j = width + r; j < width + 2 * r; ++j) dst[reflect_index(j - r, width)] += padded[j];
    }
  }
}

}  // namespace zsd::kernels
