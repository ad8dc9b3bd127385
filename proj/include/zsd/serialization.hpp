#pragma once

// JSON forms of models, sigma maps and edits, plus the on-disk layouts
// built from them (checkpoints, sigma-map export directories).

#include <filesystem>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "zsd/agbf.hpp"

namespace zsd {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

nlohmann::json model_to_json(const DenoiserModel& model);
/// Throws FormatError on missing keys, wrong lengths or a version mismatch.
DenoiserModel model_from_json(const nlohmann::json& j);
void save_checkpoint(const DenoiserModel& model, const std::filesystem::path& path);
DenoiserModel load_checkpoint(const std::filesystem::path& path);

nlohmann::json sigma_maps_to_json(const SigmaMaps& maps, int stage);
SigmaMaps sigma_maps_from_json(const nlohmann::json& j);

nlohmann::json roi_to_json(const RoiRect& roi);
RoiRect roi_from_json(const nlohmann::json& j);
nlohmann::json bounds_to_json(const SigmaBounds& bounds);
SigmaBounds bounds_from_json(const nlohmann::json& j);

/// {"stage":0,"region":{"x0":..,"y0":..,"x1":..,"y1":..},"multiplier_r":2,
///  "multiplier_x":1,"multiplier_y":1,"clamp_max":{"r":1.0}}; missing
/// multipliers default to 1.
nlohmann::json edit_to_json(const SigmaEdit& edit);
SigmaEdit edit_from_json(const nlohmann::json& j);
std::vector<SigmaEdit> edits_from_json(const nlohmann::json& j);

/// Per-channel stage heatmap: 8-bit, one block of `scale` pixels per patch,
/// [lo, hi] mapped linearly onto [0, 255].
Image sigma_heatmap(const std::vector<double>& values, int grid_w, int grid_h, double lo, double hi, int scale);

/// Writes stage<n>.json and stage<n>_sigma_{r,x,y}.png (+ .png.json sidecars
/// with the min/max of the color scale). A channel shares one color scale
/// across all stages.
void export_sigma_maps(const std::vector<SigmaMaps>& maps, const std::filesystem::path& dir, int patch);
/// Reads stage0.json, stage1.json, ... until the first missing index.
std::vector<SigmaMaps> load_sigma_maps(const std::filesystem::path& dir);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace zsd
