#pragma once

// Zero-shot training on a single image: loss assembly, AdamW and the
// full-batch optimization loop.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "zsd/agbf.hpp"
#include "zsd/autodiff.hpp"
#include "zsd/image.hpp"

namespace zsd {

enum class ElsMode { els, random, none };

ElsMode parse_els_mode(const std::string& name);
std::string to_string(ElsMode mode);

struct LossConfig {
  double lambda = 350.0;
  double s1 = 9.0;
  double s2 = 10.0;
  /// Reconstruction terms, for ablations: term 1 compares the two shuffled
  /// views, terms 2-3 tie each view to the downsampled full-resolution
  /// output, term 4 compares the two downsampled outputs.
  bool use_view_term = true;
  bool use_cross_scale_terms = true;
  bool use_output_pair_term = true;

  void validate() const;
};

struct TrainConfig {
  int epochs = 500;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-2;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  ElsMode els_mode = ElsMode::els;

  void validate() const;
};

struct ModelConfig {
  int stages = 2;
  int patch_size = kDefaultPatch;
  int embed_dim = kDefaultEmbed;
  SigmaBounds sigma_upper_bounds;
};

/// Initial sigma targets of a fresh model.
inline constexpr double kInitSigmaRange = 0.05;
inline constexpr double kInitSigmaSpatial = 1.0;

/// Xavier-uniform projections, unit layer-norm scale, zero head weights and
/// head biases at softplus^-1 of the initial sigma targets.
DenoiserModel init_params(std::uint64_t seed, int patch, int embed_dim, int stages);

/// FNV-1a over the bytes of the flattened parameters.
std::uint64_t params_checksum(const DenoiserModel& model);

/// Holds the fixed training targets for one image (both shuffled views and
/// |DoG(y)|) and builds the loss on a tape.
class LossProblem {
 public:
  LossProblem(const Image& y, const DenoiserModel& shape, const LossConfig& cfg, ElsMode mode,
              std::uint64_t shuffle_seed = 0);

  struct Terms {
    ad::Var reconstruction;
    ad::Var regularization;
    ad::Var total;
  };
  Terms build(ad::Tape& tape, ad::Var params) const;
  ad::LossFn loss_fn() const;

  const Image& view1() const { return view1_; }
  const Image& view2() const { return view2_; }

 private:
  Image y_;
  Image view1_, view2_;
  Tensor abs_dog_y_;
  std::vector<double> k1_, k2_;
  DenoiserModel shape_;
  LossConfig cfg_;
};

double reconstruction_loss(const DenoiserModel& model, const Image& y, ElsMode mode, const LossConfig& cfg = {});
double regularization_loss(const DenoiserModel& model, const Image& y, const LossConfig& cfg = {});
double total_loss(const DenoiserModel& model, const Image& y, const LossConfig& cfg, ElsMode mode);

struct AdamState {
  std::vector<double> m, v;
  std::int64_t step = 0;
};

/// One decoupled-weight-decay Adam update of params in place.
void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& cfg);

struct TrainReport {
  std::vector<double> loss_per_epoch;
  double wall_time = 0.0;
  std::uint64_t final_params_checksum = 0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int epoch) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct TrainResult {
  DenoiserModel model;
  TrainReport report;
  PadInfo pad;
};

/// Called after every epoch with (epoch index, loss); return false to stop.
using ProgressFn = std::function<bool(int epoch, double loss)>;

/// Pads y to a multiple of 2 * patch, then runs one full-batch AdamW step per
/// epoch. Throws TrainingError if the loss turns non-finite.
TrainResult train_single_image(const Image& y, const TrainConfig& train_cfg, const LossConfig& loss_cfg,
                               const ModelConfig& model_cfg, const ProgressFn& progress = {});

/// Pad, denoise with a trained model, crop back.
DenoiseResult denoise_padded(const Image& y, const DenoiserModel& model, PadInfo* pad = nullptr);

nlohmann::json training_report_json(const TrainReport& report, const TrainConfig& train_cfg,
                                    const LossConfig& loss_cfg, const ModelConfig& model_cfg);

}  // namespace zsd
