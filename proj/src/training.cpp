#include "zsd/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <random>

#include "zsd/signal.hpp"

namespace zsd {

ElsMode parse_els_mode(const std::string& name) {
  if (name == "els") return ElsMode::els;
  if (name == "random") return ElsMode::random;
  if (name == "none") return ElsMode::none;
  throw std::invalid_argument("unknown ELS mode '" + name + "' (expected els, random or none)");
}

std::string to_string(ElsMode mode) {
  switch (mode) {
    case ElsMode::els: return "els";
    case ElsMode::random: return "random";
    case ElsMode::none: return "none";
  }
  return "?";
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(s1 > 0.0) || !(s2 > s1)) throw std::invalid_argument("DoG scales must satisfy 0 < s1 < s2");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("betas in [0,1)");
  if (!(weight_decay >= 0.0) || !(eps > 0.0)) throw std::invalid_argument("weight decay >= 0 and eps > 0 required");
}

DenoiserModel init_params(std::uint64_t seed, int patch, int embed_dim, int stages) {
  if (patch <= 0 || embed_dim <= 0 || stages < 1 || stages > kMaxStages) {
    throw std::invalid_argument("init_params: invalid model dimensions");
  }
  std::mt19937_64 rng(seed);
  auto xavier = [&rng](int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    Tensor t(fan_in, fan_out);
    for (double& v : t.data) v = u(rng);
    return t;
  };
  DenoiserModel m;
  m.patch_size = patch;
  m.embed_dim = embed_dim;
  const int in_dim = patch * patch;
  for (int s = 0; s < stages; ++s) {
    StageParams sp = StageParams::zeros(in_dim, embed_dim);
    sp.wq = xavier(in_dim, embed_dim);
    sp.wk = xavier(in_dim, embed_dim);
    sp.wv = xavier(in_dim, embed_dim);
    sp.wq_sigma = xavier(embed_dim, embed_dim);
    sp.wk_sigma = xavier(embed_dim, embed_dim);
    sp.wv_sigma = xavier(embed_dim, embed_dim);
    sp.ln_scale.assign(embed_dim, 1.0);
    sp.head_r.bias = dense::softplus_inverse(kInitSigmaRange);
    sp.head_x.bias = dense::softplus_inverse(kInitSigmaSpatial);
    sp.head_y.bias = dense::softplus_inverse(kInitSigmaSpatial);
    m.stages.push_back(std::move(sp));
  }
  return m;
}

std::uint64_t params_checksum(const DenoiserModel& model) {
  const auto flat = flatten(model);
  std::uint64_t h = 1469598103934665603ull;
  for (double v : flat.values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ull;
    }
  }
  return h;
}

namespace {

Image shuffled_view(const Image& g, ElsMode mode, std::uint64_t seed) {
  switch (mode) {
    case ElsMode::els: return els(g);
    case ElsMode::random: return random_shuffle_2x2(g, seed);
    case ElsMode::none: return g;
  }
  return g;
}

Tensor abs_values(Tensor t) {
  for (double& v : t.data) v = std::abs(v);
  return t;
}

}  // namespace

LossProblem::LossProblem(const Image& y, const DenoiserModel& shape, const LossConfig& cfg, ElsMode mode,
                         std::uint64_t shuffle_seed)
    : y_(y), shape_(shape), cfg_(cfg) {
  cfg.validate();
  shape.validate();
  const int modulus = 2 * shape.patch_size;
  if (y.width() % modulus != 0 || y.height() % modulus != 0) {
    throw std::invalid_argument("loss: image dims must be multiples of " + std::to_string(modulus));
  }
  auto [g1, g2] = downsample_pair(y);
  // Distinct seeds so the two views are not shuffled identically.
  view1_ = shuffled_view(g1, mode, shuffle_seed * 2 + 1);
  view2_ = shuffled_view(g2, mode, shuffle_seed * 2 + 2);
  k1_ = gaussian_kernel_1d(cfg.s1);
  k2_ = gaussian_kernel_1d(cfg.s2);
  abs_dog_y_ = abs_values(Tensor::from_image(dog(y, cfg.s1, cfg.s2)));
}

LossProblem::Terms LossProblem::build(ad::Tape& tape, ad::Var params) const {
  using namespace ad;
  auto f = [&](const Image& img) { return forward_on_tape(tape.constant(Tensor::from_image(img)), params, shape_).back().output; };
  Var fy = f(y_);
  Var f1 = f(view1_);
  Var f2 = f(view2_);
  Var d1 = downsample(fy, Downsample::g1);
  Var d2 = downsample(fy, Downsample::g2);

  Var rec = tape.constant(Tensor(1, 1, 0.0));
  if (cfg_.use_view_term) rec = rec + l1_mean(f1, f2);
  if (cfg_.use_cross_scale_terms) rec = rec + l1_mean(f1, d1) + l1_mean(f2, d2);
  if (cfg_.use_output_pair_term) rec = rec + l1_mean(d1, d2);
  rec = scale(rec, 1.0 / 3.0);

  Terms t;
  t.reconstruction = rec;
  if (cfg_.lambda > 0.0) {
    Var dog_fy = convolve_separable(fy, k2_) - convolve_separable(fy, k1_);
    t.regularization = l1_mean(abs(dog_fy), tape.constant(abs_dog_y_));
    t.total = rec + cfg_.lambda * t.regularization;
  } else {
    t.regularization = tape.constant(Tensor(1, 1, 0.0));
    t.total = rec;
  }
  return t;
}

ad::LossFn LossProblem::loss_fn() const {
  return [this](ad::Tape& tape, ad::Var params) { return build(tape, params).total; };
}

namespace {

LossProblem::Terms forward_terms(ad::Tape& tape, const DenoiserModel& model, const Image& y, const LossConfig& cfg,
                                 ElsMode mode) {
  LossProblem problem(y, model, cfg, mode);
  const auto flat = flatten(model);
  return problem.build(tape, tape.constant(Tensor(1, static_cast<int>(flat.size()), flat.values)));
}

// The regularizer does not depend on the shuffle, so it is evaluated without one.
LossConfig only_reg(LossConfig cfg) {
  cfg.use_view_term = cfg.use_cross_scale_terms = cfg.use_output_pair_term = false;
  return cfg;
}

}  // namespace

double reconstruction_loss(const DenoiserModel& model, const Image& y, ElsMode mode, const LossConfig& cfg) {
  LossConfig c = cfg;
  c.lambda = 0.0;
  ad::Tape tape;
  return forward_terms(tape, model, y, c, mode).reconstruction.scalar();
}

double regularization_loss(const DenoiserModel& model, const Image& y, const LossConfig& cfg) {
  LossConfig c = only_reg(cfg);
  if (!(c.lambda > 0.0)) c.lambda = 1.0;
  ad::Tape tape;
  return forward_terms(tape, model, y, c, ElsMode::none).regularization.scalar();
}

double total_loss(const DenoiserModel& model, const Image& y, const LossConfig& cfg, ElsMode mode) {
  ad::Tape tape;
  return forward_terms(tape, model, y, cfg, mode).total.scalar();
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw std::invalid_argument("adamw: gradient length mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adamw: state length mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.eps)) + cfg.learning_rate * cfg.weight_decay * params[i];
  }
}

TrainResult train_single_image(const Image& y, const TrainConfig& train_cfg, const LossConfig& loss_cfg,
                               const ModelConfig& model_cfg, const ProgressFn& progress) {
  train_cfg.validate();
  loss_cfg.validate();
  if (!y.all_finite()) throw std::invalid_argument("input image has non-finite pixels");
  const auto start = std::chrono::steady_clock::now();

  TrainResult result;
  auto [padded, pad] = pad_to_multiple(y, 2 * model_cfg.patch_size);
  result.pad = pad;
  DenoiserModel model = init_params(train_cfg.seed, model_cfg.patch_size, model_cfg.embed_dim, model_cfg.stages);
  model.sigma_upper_bounds = model_cfg.sigma_upper_bounds;
  model.validate();

  const LossProblem problem(padded, model, loss_cfg, train_cfg.els_mode, train_cfg.seed);
  const ad::LossFn loss_fn = problem.loss_fn();
  ad::ParamVector params = flatten(model);
  AdamState state;
  result.report.loss_per_epoch.reserve(static_cast<std::size_t>(train_cfg.epochs));

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    ad::GradientEvaluation ev;
    try {
      ev = ad::evaluate_with_gradients(loss_fn, params);
    } catch (const ad::NumericError& e) {
      throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
    }
    if (!std::isfinite(ev.loss)) throw TrainingError("epoch " + std::to_string(epoch) + ": loss is not finite", epoch);
    result.report.loss_per_epoch.push_back(ev.loss);
    adamw_step(params.values, ev.gradient, state, train_cfg);
    for (double v : params.values) {
      if (!std::isfinite(v)) throw TrainingError("epoch " + std::to_string(epoch) + ": parameters diverged", epoch);
    }
    if (progress && !progress(epoch, ev.loss)) break;
  }

  result.model = unflatten(params, model);
  result.report.final_params_checksum = params_checksum(result.model);
  result.report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

DenoiseResult denoise_padded(const Image& y, const DenoiserModel& model, PadInfo* pad_out) {
  auto [padded, pad] = pad_to_multiple(y, 2 * model.patch_size);
  DenoiseResult r = denoise(padded, model);
  r.image = crop_with(r.image, pad);
  if (pad_out) *pad_out = pad;
  return r;
}

nlohmann::json training_report_json(const TrainReport& report, const TrainConfig& t, const LossConfig& l,
                                    const ModelConfig& m) {
  char checksum[17];
  std::snprintf(checksum, sizeof checksum, "%016llx", static_cast<unsigned long long>(report.final_params_checksum));
  return {{"loss", report.loss_per_epoch},
          {"seconds", report.wall_time},
          {"checksum", checksum},
          {"config",
           {{"epochs", t.epochs},
            {"learning_rate", t.learning_rate},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"weight_decay", t.weight_decay},
            {"eps", t.eps},
            {"seed", t.seed},
            {"els_mode", to_string(t.els_mode)},
            {"lambda", l.lambda},
            {"s1", l.s1},
            {"s2", l.s2},
            {"stages", m.stages},
            {"patch_size", m.patch_size},
            {"embed_dim", m.embed_dim}}}};
}

}  // namespace zsd
