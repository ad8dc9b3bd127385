#pragma once

// Attention-guided bilateral filter: per-patch sigma prediction with a
// feature-attention / sigma-attention pair, followed by a spatially varying
// bilateral filter. Stages are chained; each predicts from its own input.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "zsd/autodiff.hpp"
#include "zsd/image.hpp"
#include "zsd/tensor.hpp"

namespace zsd {

inline constexpr int kDefaultPatch = 8;
inline constexpr int kDefaultEmbed = 8;
inline constexpr int kMaxStages = 3;
inline constexpr double kLayerNormEps = 1e-5;

struct SigmaHead {
  std::vector<double> weight;  // embed_dim
  double bias = 0.0;
  bool operator==(const SigmaHead&) const = default;
};

struct StageParams {
  Tensor wq, wk, wv;                    // patch^2 x d
  Tensor wq_sigma, wk_sigma, wv_sigma;  // d x d
  std::vector<double> ln_scale, ln_shift;
  SigmaHead head_r, head_x, head_y;

  static StageParams zeros(int input_dim, int embed_dim);
  int input_dim() const { return wq.rows; }
  int embed_dim() const { return wq.cols; }
  std::size_t parameter_count() const;
  bool operator==(const StageParams&) const = default;
};

/// Optional per-channel caps applied after the softplus heads.
struct SigmaBounds {
  std::optional<double> r, x, y;
  bool any() const { return r || x || y; }
  bool operator==(const SigmaBounds&) const = default;
};

struct DenoiserModel {
  int patch_size = kDefaultPatch;
  int embed_dim = kDefaultEmbed;
  std::vector<StageParams> stages;
  SigmaBounds sigma_upper_bounds;

  std::size_t parameter_count() const;
  /// Throws std::invalid_argument when shapes disagree or the stage count is outside 1..3.
  void validate() const;
  bool operator==(const DenoiserModel&) const = default;
};

struct SigmaMaps {
  int grid_w = 0;
  int grid_h = 0;
  std::vector<double> sigma_r, sigma_x, sigma_y;

  SigmaMaps() = default;
  SigmaMaps(int gw, int gh, double r, double x, double y);
  std::size_t size() const { return sigma_r.size(); }
  void validate() const;
  bool operator==(const SigmaMaps&) const = default;
};

struct SigmaEdit {
  int stage = 0;
  RoiRect region;
  double multiplier_r = 1.0;
  double multiplier_x = 1.0;
  double multiplier_y = 1.0;
  SigmaBounds clamp_max;
};

/// Row k is patch k (row-major over the grid) flattened row-major.
Tensor extract_patches(const Image& image, int patch);
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// 2 * ceil(max(sigma_x, sigma_y) + 1)
int kernel_halfwidth(double sigma_x, double sigma_y);
std::vector<int> kernel_halfwidths(const SigmaMaps& maps);

SigmaMaps predict_sigmas(const Image& stage_input, const StageParams& stage, int patch,
                         const SigmaBounds& bounds = {});
Image bilateral_apply(const Image& stage_input, const SigmaMaps& maps, int patch);

struct DenoiseResult {
  Image image;
  std::vector<SigmaMaps> maps;
};

DenoiseResult denoise(const Image& image, const DenoiserModel& model);
SigmaMaps apply_sigma_edit(const SigmaMaps& maps, const SigmaEdit& edit, int patch);
Image refilter(const Image& image, const DenoiserModel& model, const std::vector<SigmaMaps>& maps);

// Flat parameter view used by training ---------------------------------------

/// Segments per stage, in order: Wq Wk Wv Wq_sigma Wk_sigma Wv_sigma ln_scale
/// ln_shift head_{r,x,y}_weight head_{r,x,y}_bias, prefixed "stage<n>.".
ad::ParamVector param_layout(int patch, int embed_dim, int stages);
ad::ParamVector flatten(const DenoiserModel& model);
/// Inverse of flatten; `shape` supplies patch size, embed dim, stage count and bounds.
DenoiserModel unflatten(const ad::ParamVector& params, const DenoiserModel& shape);

struct StageVars {
  ad::Var output;
  ad::Var sigma_r, sigma_x, sigma_y;  // grid_h x grid_w
};

/// The cascade on a tape. `image` is H x W; params holds flatten(model)
/// values in param_layout order. One entry per stage.
std::vector<StageVars> forward_on_tape(ad::Var image, ad::Var params, const DenoiserModel& shape);

}  // namespace zsd
