#include "zsd/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "zsd/image_io.hpp"

namespace zsd {

using nlohmann::json;

namespace {

std::vector<double> number_array(const json& j, const char* key, std::size_t expected) {
  if (!j.contains(key)) throw FormatError(std::string("missing '") + key + "'");
  const json& a = j.at(key);
  if (!a.is_array() || a.size() != expected) {
    throw FormatError(std::string("'") + key + "' must be an array of " + std::to_string(expected) + " numbers");
  }
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& v : a) {
    if (!v.is_number()) throw FormatError(std::string("'") + key + "' holds a non-number");
    out.push_back(v.get<double>());
  }
  return out;
}

int positive_int(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number_integer() || j.at(key).get<int>() <= 0) {
    throw FormatError(std::string("'") + key + "' must be a positive integer");
  }
  return j.at(key).get<int>();
}

std::optional<double> optional_number(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_number()) throw FormatError(std::string("'") + key + "' must be a number");
  return j.at(key).get<double>();
}

const char* const kChannels[] = {"sigma_r", "sigma_x", "sigma_y"};

}  // namespace

json model_to_json(const DenoiserModel& model) {
  model.validate();
  json stages = json::array();
  for (const auto& s : model.stages) {
    stages.push_back({{"Wq", s.wq.data},
                      {"Wk", s.wk.data},
                      {"Wv", s.wv.data},
                      {"Wq_sigma", s.wq_sigma.data},
                      {"Wk_sigma", s.wk_sigma.data},
                      {"Wv_sigma", s.wv_sigma.data},
                      {"ln_scale", s.ln_scale},
                      {"ln_shift", s.ln_shift},
                      {"head_r_weight", s.head_r.weight},
                      {"head_r_bias", std::vector<double>{s.head_r.bias}},
                      {"head_x_weight", s.head_x.weight},
                      {"head_x_bias", std::vector<double>{s.head_x.bias}},
                      {"head_y_weight", s.head_y.weight},
                      {"head_y_bias", std::vector<double>{s.head_y.bias}}});
  }
  json j = {{"version", kCheckpointVersion},
            {"patch_size", model.patch_size},
            {"embed_dim", model.embed_dim},
            {"stages", stages}};
  if (model.sigma_upper_bounds.any()) j["sigma_upper_bounds"] = bounds_to_json(model.sigma_upper_bounds);
  return j;
}

DenoiserModel model_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("checkpoint must be a JSON object");
  if (j.contains("version") && j.at("version") != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + j.at("version").dump());
  }
  DenoiserModel m;
  m.patch_size = positive_int(j, "patch_size");
  m.embed_dim = positive_int(j, "embed_dim");
  if (!j.contains("stages") || !j.at("stages").is_array()) throw FormatError("missing 'stages' array");
  const int in_dim = m.patch_size * m.patch_size, d = m.embed_dim;
  const auto proj = static_cast<std::size_t>(in_dim) * d, sq = static_cast<std::size_t>(d) * d;
  const auto dd = static_cast<std::size_t>(d);
  for (const auto& js : j.at("stages")) {
    if (!js.is_object()) throw FormatError("stage entries must be objects");
    StageParams s;
    s.wq = Tensor(in_dim, d, number_array(js, "Wq", proj));
    s.wk = Tensor(in_dim, d, number_array(js, "Wk", proj));
    s.wv = Tensor(in_dim, d, number_array(js, "Wv", proj));
    s.wq_sigma = Tensor(d, d, number_array(js, "Wq_sigma", sq));
    s.wk_sigma = Tensor(d, d, number_array(js, "Wk_sigma", sq));
    s.wv_sigma = Tensor(d, d, number_array(js, "Wv_sigma", sq));
    s.ln_scale = number_array(js, "ln_scale", dd);
    s.ln_shift = number_array(js, "ln_shift", dd);
    s.head_r = {number_array(js, "head_r_weight", dd), number_array(js, "head_r_bias", 1)[0]};
    s.head_x = {number_array(js, "head_x_weight", dd), number_array(js, "head_x_bias", 1)[0]};
    s.head_y = {number_array(js, "head_y_weight", dd), number_array(js, "head_y_bias", 1)[0]};
    m.stages.push_back(std::move(s));
  }
  if (j.contains("sigma_upper_bounds")) m.sigma_upper_bounds = bounds_from_json(j.at("sigma_upper_bounds"));
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return m;
}

void save_checkpoint(const DenoiserModel& model, const std::filesystem::path& path) {
  write_text_file(path, model_to_json(model).dump(1));
}

DenoiserModel load_checkpoint(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

json sigma_maps_to_json(const SigmaMaps& maps, int stage) {
  return {{"stage", stage},
          {"grid", {maps.grid_h, maps.grid_w}},
          {"sigma_r", maps.sigma_r},
          {"sigma_x", maps.sigma_x},
          {"sigma_y", maps.sigma_y}};
}

SigmaMaps sigma_maps_from_json(const json& j) {
  if (!j.is_object() || !j.contains("grid") || !j.at("grid").is_array() || j.at("grid").size() != 2) {
    throw FormatError("sigma map needs a 'grid':[h,w] entry");
  }
  SigmaMaps m;
  try {
    m.grid_h = j.at("grid")[0].get<int>();
    m.grid_w = j.at("grid")[1].get<int>();
  } catch (const json::exception&) {
    throw FormatError("sigma map grid must hold integers");
  }
  if (m.grid_h <= 0 || m.grid_w <= 0) throw FormatError("sigma map grid must be positive");
  const auto n = static_cast<std::size_t>(m.grid_h) * m.grid_w;
  m.sigma_r = number_array(j, "sigma_r", n);
  m.sigma_x = number_array(j, "sigma_x", n);
  m.sigma_y = number_array(j, "sigma_y", n);
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return m;
}

json roi_to_json(const RoiRect& roi) { return {{"x0", roi.x0}, {"y0", roi.y0}, {"x1", roi.x1}, {"y1", roi.y1}}; }

RoiRect roi_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("region must be an object {x0,y0,x1,y1}");
  RoiRect r;
  try {
    r.x0 = j.at("x0").get<int>();
    r.y0 = j.at("y0").get<int>();
    r.x1 = j.at("x1").get<int>();
    r.y1 = j.at("y1").get<int>();
  } catch (const json::exception&) {
    throw FormatError("region must hold integer x0, y0, x1, y1");
  }
  return r;
}

json bounds_to_json(const SigmaBounds& b) {
  json j = json::object();
  if (b.r) j["r"] = *b.r;
  if (b.x) j["x"] = *b.x;
  if (b.y) j["y"] = *b.y;
  return j;
}

SigmaBounds bounds_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("bounds must be an object with optional r, x, y");
  return {optional_number(j, "r"), optional_number(j, "x"), optional_number(j, "y")};
}

json edit_to_json(const SigmaEdit& e) {
  json j = {{"stage", e.stage},
            {"region", roi_to_json(e.region)},
            {"multiplier_r", e.multiplier_r},
            {"multiplier_x", e.multiplier_x},
            {"multiplier_y", e.multiplier_y}};
  if (e.clamp_max.any()) j["clamp_max"] = bounds_to_json(e.clamp_max);
  return j;
}

SigmaEdit edit_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("an edit must be a JSON object");
  SigmaEdit e;
  if (j.contains("stage")) {
    if (!j.at("stage").is_number_integer()) throw FormatError("'stage' must be an integer");
    e.stage = j.at("stage").get<int>();
  }
  if (!j.contains("region")) throw FormatError("an edit needs a 'region'");
  e.region = roi_from_json(j.at("region"));
  e.multiplier_r = optional_number(j, "multiplier_r").value_or(1.0);
  e.multiplier_x = optional_number(j, "multiplier_x").value_or(1.0);
  e.multiplier_y = optional_number(j, "multiplier_y").value_or(1.0);
  if (j.contains("clamp_max")) e.clamp_max = bounds_from_json(j.at("clamp_max"));
  return e;
}

std::vector<SigmaEdit> edits_from_json(const json& j) {
  if (!j.is_array()) throw FormatError("edits must be a JSON list");
  std::vector<SigmaEdit> out;
  for (const auto& e : j) out.push_back(edit_from_json(e));
  return out;
}

Image sigma_heatmap(const std::vector<double>& values, int grid_w, int grid_h, double lo, double hi, int scale) {
  if (scale <= 0) throw std::invalid_argument("heatmap scale must be positive");
  Image img(grid_w * scale, grid_h * scale);
  const double span = hi - lo;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double v = values[static_cast<std::size_t>(y / scale) * grid_w + x / scale];
      img.at(x, y) = span > 0.0 ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
    }
  }
  return img;
}

void export_sigma_maps(const std::vector<SigmaMaps>& maps, const std::filesystem::path& dir, int patch) {
  std::filesystem::create_directories(dir);
  for (int c = 0; c < 3; ++c) {
    auto channel = [c](const SigmaMaps& m) -> const std::vector<double>& {
      return c == 0 ? m.sigma_r : (c == 1 ? m.sigma_x : m.sigma_y);
    };
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& m : maps) {
      const auto [mn, mx] = std::minmax_element(channel(m).begin(), channel(m).end());
      lo = std::min(lo, *mn);
      hi = std::max(hi, *mx);
    }
    for (std::size_t s = 0; s < maps.size(); ++s) {
      const std::string base = "stage" + std::to_string(s) + "_" + kChannels[c] + ".png";
      save_image(sigma_heatmap(channel(maps[s]), maps[s].grid_w, maps[s].grid_h, lo, hi, patch), dir / base,
                 ImageFormat::png8);
      write_text_file(dir / (base + ".json"),
                      json{{"stage", s}, {"channel", kChannels[c]}, {"min", lo}, {"max", hi}}.dump(1));
    }
  }
  for (std::size_t s = 0; s < maps.size(); ++s) {
    write_text_file(dir / ("stage" + std::to_string(s) + ".json"),
                    sigma_maps_to_json(maps[s], static_cast<int>(s)).dump(1));
  }
}

std::vector<SigmaMaps> load_sigma_maps(const std::filesystem::path& dir) {
  std::vector<SigmaMaps> out;
  for (int s = 0;; ++s) {
    const auto p = dir / ("stage" + std::to_string(s) + ".json");
    if (!std::filesystem::exists(p)) break;
    out.push_back(sigma_maps_from_json(read_json_file(p)));
  }
  if (out.empty()) throw IoError("no sigma maps (stage0.json) in " + dir.string());
  return out;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace zsd
