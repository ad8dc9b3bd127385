#include "zsd/agbf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "zsd/kernels.hpp"

namespace zsd {

namespace {

std::size_t stage_size(int input_dim, int d) {
  return 3 * static_cast<std::size_t>(input_dim) * d + 3 * static_cast<std::size_t>(d) * d + 2 * d + 3 * (d + 1);
}

void check_patch_divides(const Image& image, int patch) {
  if (patch <= 0 || image.width() % patch != 0 || image.height() % patch != 0) {
    throw std::invalid_argument("image dims " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                                " are not divisible by the patch size " + std::to_string(patch));
  }
}

void check_maps_fit(const Image& image, const SigmaMaps& maps, int patch) {
  check_patch_divides(image, patch);
  if (maps.grid_w != image.width() / patch || maps.grid_h != image.height() / patch) {
    throw std::invalid_argument("sigma maps do not match the image dims");
  }
  maps.validate();
}

ad::Var head(ad::Var features, ad::Var weight, ad::Var bias, std::optional<double> cap, int gh, int gw) {
  ad::Var s = ad::softplus(ad::add_scalar(ad::matmul(features, weight), bias));
  if (cap) s = ad::clamp_max(s, *cap);
  return ad::reshape(s, gh, gw);
}

std::vector<int> halfwidths_of(const Tensor& sx, const Tensor& sy) {
  std::vector<int> k(sx.size());
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = kernel_halfwidth(sx.data[i], sy.data[i]);
  return k;
}

StageVars stage_on_tape(ad::Var input, ad::Var params, std::size_t offset, int patch, int d,
                        const SigmaBounds& bounds) {
  const int in_dim = patch * patch;
  const int gh = input.rows() / patch, gw = input.cols() / patch;
  auto take = [&](int rows, int cols) {
    ad::Var v = ad::slice(params, offset, rows, cols);
    offset += static_cast<std::size_t>(rows) * cols;
    return v;
  };
  ad::Var wq = take(in_dim, d), wk = take(in_dim, d), wv = take(in_dim, d);
  ad::Var wqs = take(d, d), wks = take(d, d), wvs = take(d, d);
  ad::Var gamma = take(1, d), beta = take(1, d);
  ad::Var wr = take(d, 1), wx = take(d, 1), wy = take(d, 1);
  ad::Var br = take(1, 1), bx = take(1, 1), by = take(1, 1);

  ad::Var x = ad::extract_patches(input, patch);
  ad::Var features = ad::attention(ad::matmul(x, wq), ad::matmul(x, wk), ad::matmul(x, wv));
  ad::Var ctx = ad::attention(ad::matmul(features, wqs), ad::matmul(features, wks), ad::matmul(features, wvs));
  ad::Var normed = ad::layer_norm_rows(ctx, gamma, beta, kLayerNormEps);

  StageVars out;
  out.sigma_r = head(normed, wr, br, bounds.r, gh, gw);
  out.sigma_x = head(normed, wx, bx, bounds.x, gh, gw);
  out.sigma_y = head(normed, wy, by, bounds.y, gh, gw);
  out.output = ad::bilateral(input, out.sigma_r, out.sigma_x, out.sigma_y, patch,
                             halfwidths_of(out.sigma_x.value(), out.sigma_y.value()));
  return out;
}

SigmaMaps maps_of(const StageVars& s) {
  SigmaMaps m;
  m.grid_h = s.sigma_r.rows();
  m.grid_w = s.sigma_r.cols();
  m.sigma_r = s.sigma_r.value().data;
  m.sigma_x = s.sigma_x.value().data;
  m.sigma_y = s.sigma_y.value().data;
  return m;
}

}  // namespace

StageParams StageParams::zeros(int input_dim, int embed_dim) {
  StageParams s;
  s.wq = s.wk = s.wv = Tensor(input_dim, embed_dim);
  s.wq_sigma = s.wk_sigma = s.wv_sigma = Tensor(embed_dim, embed_dim);
  s.ln_scale.assign(embed_dim, 0.0);
  s.ln_shift.assign(embed_dim, 0.0);
  s.head_r.weight = s.head_x.weight = s.head_y.weight = std::vector<double>(embed_dim, 0.0);
  return s;
}

std::size_t StageParams::parameter_count() const {
  std::size_t n = wq.size() + wk.size() + wv.size() + wq_sigma.size() + wk_sigma.size() + wv_sigma.size();
  n += ln_scale.size() + ln_shift.size();
  for (const SigmaHead* h : {&head_r, &head_x, &head_y}) n += h->weight.size() + 1;
  return n;
}

std::size_t DenoiserModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.parameter_count();
  return n;
}

void DenoiserModel::validate() const {
  if (patch_size <= 0 || embed_dim <= 0) throw std::invalid_argument("patch size and embed dim must be positive");
  if (stages.empty() || stages.size() > static_cast<std::size_t>(kMaxStages)) {
    throw std::invalid_argument("stage count must be between 1 and 3");
  }
  const int in_dim = patch_size * patch_size;
  const auto d = static_cast<std::size_t>(embed_dim);
  for (const auto& s : stages) {
    bool ok = s.wq.rows == in_dim && s.wq.cols == embed_dim && s.wk.same_shape(s.wq) && s.wv.same_shape(s.wq);
    ok = ok && s.wq_sigma.rows == embed_dim && s.wq_sigma.cols == embed_dim && s.wk_sigma.same_shape(s.wq_sigma) &&
         s.wv_sigma.same_shape(s.wq_sigma);
    ok = ok && s.ln_scale.size() == d && s.ln_shift.size() == d;
    ok = ok && s.head_r.weight.size() == d && s.head_x.weight.size() == d && s.head_y.weight.size() == d;
    if (!ok) throw std::invalid_argument("stage parameter shapes do not match patch size / embed dim");
  }
  for (std::optional<double> b : {sigma_upper_bounds.r, sigma_upper_bounds.x, sigma_upper_bounds.y}) {
    if (b && !(*b > 0.0)) throw std::invalid_argument("sigma upper bounds must be positive");
  }
}

SigmaMaps::SigmaMaps(int gw, int gh, double r, double x, double y)
    : grid_w(gw),
      grid_h(gh),
      sigma_r(static_cast<std::size_t>(gw) * gh, r),
      sigma_x(static_cast<std::size_t>(gw) * gh, x),
      sigma_y(static_cast<std::size_t>(gw) * gh, y) {}

void SigmaMaps::validate() const {
  const auto n = static_cast<std::size_t>(grid_w) * grid_h;
  if (grid_w <= 0 || grid_h <= 0 || sigma_r.size() != n || sigma_x.size() != n || sigma_y.size() != n) {
    throw std::invalid_argument("sigma map lengths do not match the grid");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigma_r[i] > 0.0) || !(sigma_x[i] > 0.0) || !(sigma_y[i] > 0.0) || !std::isfinite(sigma_r[i]) ||
        !std::isfinite(sigma_x[i]) || !std::isfinite(sigma_y[i])) {
      throw std::invalid_argument("sigma values must be positive and finite");
    }
  }
}

Tensor extract_patches(const Image& image, int patch) {
  check_patch_divides(image, patch);
  const int gw = image.width() / patch, gh = image.height() / patch;
  Tensor out(gw * gh, patch * patch);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      double* row = out.row(gy * gw + gx).data();
      for (int py = 0; py < patch; ++py) {
        for (int px = 0; px < patch; ++px) *row++ = image.at(gx * patch + px, gy * patch + py);
      }
    }
  }
  return out;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  return dense::attention(q, k, v);
}

int kernel_halfwidth(double sigma_x, double sigma_y) {
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) throw std::invalid_argument("kernel_halfwidth: sigma must be positive");
  const double m = std::max(sigma_x, sigma_y) + 1.0;
  if (!(m < 1e8)) throw std::invalid_argument("kernel_halfwidth: sigma too large");
  return 2 * static_cast<int>(std::ceil(m));
}

std::vector<int> kernel_halfwidths(const SigmaMaps& maps) {
  std::vector<int> k(maps.size());
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = kernel_halfwidth(maps.sigma_x[i], maps.sigma_y[i]);
  return k;
}

ad::ParamVector param_layout(int patch, int embed_dim, int stages) {
  ad::ParamVector p;
  const int in_dim = patch * patch, d = embed_dim;
  for (int s = 0; s < stages; ++s) {
    const std::string pre = "stage" + std::to_string(s) + ".";
    for (const char* name : {"Wq", "Wk", "Wv"}) p.append(pre + name, in_dim, d);
    for (const char* name : {"Wq_sigma", "Wk_sigma", "Wv_sigma"}) p.append(pre + name, d, d);
    p.append(pre + "ln_scale", 1, d);
    p.append(pre + "ln_shift", 1, d);
    for (const char* name : {"head_r_weight", "head_x_weight", "head_y_weight"}) p.append(pre + name, d, 1);
    for (const char* name : {"head_r_bias", "head_x_bias", "head_y_bias"}) p.append(pre + name, 1, 1);
  }
  return p;
}

ad::ParamVector flatten(const DenoiserModel& model) {
  model.validate();
  ad::ParamVector p = param_layout(model.patch_size, model.embed_dim, static_cast<int>(model.stages.size()));
  auto out = p.values.begin();
  auto put = [&out](const std::vector<double>& v) { out = std::copy(v.begin(), v.end(), out); };
  for (const auto& s : model.stages) {
    for (const Tensor* t : {&s.wq, &s.wk, &s.wv, &s.wq_sigma, &s.wk_sigma, &s.wv_sigma}) put(t->data);
    put(s.ln_scale);
    put(s.ln_shift);
    for (const SigmaHead* h : {&s.head_r, &s.head_x, &s.head_y}) put(h->weight);
    for (const SigmaHead* h : {&s.head_r, &s.head_x, &s.head_y}) *out++ = h->bias;
  }
  return p;
}

DenoiserModel unflatten(const ad::ParamVector& params, const DenoiserModel& shape) {
  DenoiserModel m;
  m.patch_size = shape.patch_size;
  m.embed_dim = shape.embed_dim;
  m.sigma_upper_bounds = shape.sigma_upper_bounds;
  const int in_dim = m.patch_size * m.patch_size, d = m.embed_dim;
  const std::size_t n_stages = shape.stages.size();
  if (params.size() != n_stages * stage_size(in_dim, d)) {
    throw std::invalid_argument("parameter vector length does not match the model shape");
  }
  auto in = params.values.begin();
  auto take = [&in](std::vector<double>& v) {
    std::copy(in, in + static_cast<std::ptrdiff_t>(v.size()), v.begin());
    in += static_cast<std::ptrdiff_t>(v.size());
  };
  for (std::size_t i = 0; i < n_stages; ++i) {
    StageParams s = StageParams::zeros(in_dim, d);
    for (Tensor* t : {&s.wq, &s.wk, &s.wv, &s.wq_sigma, &s.wk_sigma, &s.wv_sigma}) take(t->data);
    take(s.ln_scale);
    take(s.ln_shift);
    for (SigmaHead* h : {&s.head_r, &s.head_x, &s.head_y}) take(h->weight);
    for (SigmaHead* h : {&s.head_r, &s.head_x, &s.head_y}) h->bias = *in++;
    m.stages.push_back(std::move(s));
  }
  return m;
}

std::vector<StageVars> forward_on_tape(ad::Var image, ad::Var params, const DenoiserModel& shape) {
  const int p = shape.patch_size, d = shape.embed_dim;
  if (image.rows() % p != 0 || image.cols() % p != 0) {
    throw std::invalid_argument("image dims are not divisible by the patch size");
  }
  const std::size_t per_stage = stage_size(p * p, d);
  if (params.value().size() != per_stage * shape.stages.size()) {
    throw std::invalid_argument("parameter vector length does not match the model shape");
  }
  std::vector<StageVars> out;
  ad::Var current = image;
  for (std::size_t s = 0; s < shape.stages.size(); ++s) {
    out.push_back(stage_on_tape(current, params, s * per_stage, p, d, shape.sigma_upper_bounds));
    current = out.back().output;
  }
  return out;
}

SigmaMaps predict_sigmas(const Image& stage_input, const StageParams& stage, int patch, const SigmaBounds& bounds) {
  check_patch_divides(stage_input, patch);
  DenoiserModel one;
  one.patch_size = patch;
  one.embed_dim = stage.embed_dim();
  one.stages = {stage};
  one.sigma_upper_bounds = bounds;
  const ad::ParamVector flat = flatten(one);
  ad::Tape tape;
  ad::Var img = tape.constant(Tensor::from_image(stage_input));
  ad::Var theta = tape.constant(Tensor(1, static_cast<int>(flat.size()), flat.values));
  return maps_of(stage_on_tape(img, theta, 0, patch, one.embed_dim, bounds));
}

Image bilateral_apply(const Image& stage_input, const SigmaMaps& maps, int patch) {
  check_maps_fit(stage_input, maps, patch);
  const std::vector<int> k = kernel_halfwidths(maps);
  const kernels::BilateralField field{patch, maps.grid_w, maps.grid_h, maps.sigma_r, maps.sigma_x, maps.sigma_y, k};
  Image out(stage_input.width(), stage_input.height());
  kernels::bilateral_forward(stage_input.pixels(), stage_input.width(), stage_input.height(), field, out.pixels());
  return out;
}

DenoiseResult denoise(const Image& image, const DenoiserModel& model) {
  check_patch_divides(image, model.patch_size);
  const ad::ParamVector flat = flatten(model);
  ad::Tape tape;
  ad::Var img = tape.constant(Tensor::from_image(image));
  ad::Var theta = tape.constant(Tensor(1, static_cast<int>(flat.size()), flat.values));
  const auto stages = forward_on_tape(img, theta, model);
  DenoiseResult r;
  for (const auto& s : stages) r.maps.push_back(maps_of(s));
  r.image = stages.back().output.value().to_image();
  return r;
}

SigmaMaps apply_sigma_edit(const SigmaMaps& maps, const SigmaEdit& edit, int patch) {
  maps.validate();
  if (!edit.region.valid_for(maps.grid_w * patch, maps.grid_h * patch)) {
    throw std::invalid_argument("edit region is empty or outside the image");
  }
  for (double m : {edit.multiplier_r, edit.multiplier_x, edit.multiplier_y}) {
    if (!(m > 0.0) || !std::isfinite(m)) throw std::invalid_argument("edit multipliers must be positive");
  }
  for (std::optional<double> c : {edit.clamp_max.r, edit.clamp_max.x, edit.clamp_max.y}) {
    if (c && !(*c > 0.0)) throw std::invalid_argument("edit clamps must be positive");
  }
  SigmaMaps out = maps;
  // Patch footprints [g*P, (g+1)*P) that intersect [x0, x1).
  const int gx0 = edit.region.x0 / patch, gx1 = (edit.region.x1 - 1) / patch;
  const int gy0 = edit.region.y0 / patch, gy1 = (edit.region.y1 - 1) / patch;
  auto update = [](double v, double mult, std::optional<double> cap) {
    v *= mult;
    return cap ? std::min(v, *cap) : v;
  };
  for (int gy = gy0; gy <= gy1; ++gy) {
    for (int gx = gx0; gx <= gx1; ++gx) {
      const std::size_t i = static_cast<std::size_t>(gy) * maps.grid_w + gx;
      out.sigma_r[i] = update(out.sigma_r[i], edit.multiplier_r, edit.clamp_max.r);
      out.sigma_x[i] = update(out.sigma_x[i], edit.multiplier_x, edit.clamp_max.x);
      out.sigma_y[i] = update(out.sigma_y[i], edit.multiplier_y, edit.clamp_max.y);
    }
  }
  out.validate();
  return out;
}

Image refilter(const Image& image, const DenoiserModel& model, const std::vector<SigmaMaps>& maps) {
  if (maps.size() != model.stages.size()) {
    throw std::invalid_argument("refilter: got " + std::to_string(maps.size()) + " sigma maps for a " +
                                std::to_string(model.stages.size()) + "-stage model");
  }
  Image current = image;
  for (const auto& m : maps) current = bilateral_apply(current, m, model.patch_size);
  return current;
}

}  // namespace zsd
