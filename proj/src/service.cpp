#include "zsd/service.hpp"

#include <sys/socket.h>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include <httplib.h>

#include "zsd/image_io.hpp"
#include "zsd/metrics.hpp"
#include "zsd/serialization.hpp"

namespace zsd::service {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(SessionState state) {
  switch (state) {
    case SessionState::created: return "created";
    case SessionState::training: return "training";
    case SessionState::ready: return "ready";
    case SessionState::failed: return "failed";
  }
  return "failed";
}

SessionState parse_session_state(const std::string& name) {
  for (auto s : {SessionState::created, SessionState::training, SessionState::ready, SessionState::failed}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown session state '" + name + "'");
}

namespace {

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

std::string new_session_id() {
  static std::mutex mutex;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mutex);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

json config_to_json(const TrainConfig& t, const LossConfig& l, const ModelConfig& m) {
  json j = {{"epochs", t.epochs},       {"learning_rate", t.learning_rate},
            {"weight_decay", t.weight_decay}, {"seed", t.seed},
            {"els_mode", to_string(t.els_mode)}, {"lambda", l.lambda},
            {"s1", l.s1},               {"s2", l.s2},
            {"stages", m.stages}};
  if (m.sigma_upper_bounds.any()) j["sigma_upper_bounds"] = bounds_to_json(m.sigma_upper_bounds);
  return j;
}

// Maps an edit given on the uploaded image onto the padded working grid.
SigmaEdit to_padded(SigmaEdit edit, const PadInfo& pad) {
  edit.region.x0 += pad.left;
  edit.region.x1 += pad.left;
  edit.region.y0 += pad.top;
  edit.region.y1 += pad.top;
  return edit;
}

std::vector<SigmaMaps> replay_edits(const Session& s) {
  std::vector<SigmaMaps> maps = s.base_maps;
  for (const SigmaEdit& e : s.edits) {
    auto& m = maps.at(static_cast<std::size_t>(e.stage));
    m = apply_sigma_edit(m, to_padded(e, s.pad), s.model->patch_size);
  }
  return maps;
}

// Caller holds the session mutex.
const Image& refiltered_image(Session& s) {
  if (s.edits.empty()) {
    // refilter with the base maps reproduces the denoised image exactly.
    if (!s.refiltered) s.refiltered = *s.denoised;
    return *s.refiltered;
  }
  if (!s.refiltered) s.refiltered = crop_with(refilter(s.padded, *s.model, s.edited_maps), s.pad);
  return *s.refiltered;
}

json session_json(const Session& s) {
  const int total = s.train.epochs;
  json tail = json::array();
  const std::size_t n = s.loss_history.size();
  for (std::size_t i = n > 10 ? n - 10 : 0; i < n; ++i) tail.push_back(s.loss_history[i]);
  json j = {{"id", s.id},
            {"state", to_string(s.state)},
            {"progress", {{"epoch", s.epochs_done.load()}, {"epochs", total}}},
            {"loss_tail", tail},
            {"queued", s.queued.load()},
            {"width", s.input.width()},
            {"height", s.input.height()},
            {"stages", s.model_cfg.stages},
            {"patch_size", s.model_cfg.patch_size},
            {"edit_count", s.edits.size()},
            {"created_at", s.created_at},
            {"updated_at", s.updated_at}};
  if (!s.error.empty()) j["error"] = s.error;
  return j;
}

std::shared_ptr<Session> lookup(const Service& service, const httplib::Request& req) {
  auto s = service.find(req.matches[1]);
  if (!s) throw HttpError(404, "unknown session");
  return s;
}

void require_ready(const Session& s) {
  if (s.state != SessionState::ready) throw HttpError(409, "session is " + to_string(s.state) + ", not ready");
}

}  // namespace

void apply_overrides(const json& o, TrainConfig& train, LossConfig& loss, ModelConfig& model) {
  if (o.is_null()) return;
  if (!o.is_object()) throw std::invalid_argument("config must be a JSON object");
  auto number = [](const json& v, const std::string& key) {
    if (!v.is_number()) throw std::invalid_argument("'" + key + "' must be a number");
    return v.get<double>();
  };
  auto integer = [](const json& v, const std::string& key) {
    if (!v.is_number_integer()) throw std::invalid_argument("'" + key + "' must be an integer");
    return v.get<long long>();
  };
  for (const auto& [key, v] : o.items()) {
    if (key == "epochs") train.epochs = static_cast<int>(integer(v, key));
    else if (key == "learning_rate") train.learning_rate = number(v, key);
    else if (key == "weight_decay") train.weight_decay = number(v, key);
    else if (key == "seed") train.seed = static_cast<std::uint64_t>(integer(v, key));
    else if (key == "els_mode") {
      if (!v.is_string()) throw std::invalid_argument("'els_mode' must be a string");
      train.els_mode = parse_els_mode(v.get<std::string>());
    } else if (key == "lambda") loss.lambda = number(v, key);
    else if (key == "s1") loss.s1 = number(v, key);
    else if (key == "s2") loss.s2 = number(v, key);
    else if (key == "stages") model.stages = static_cast<int>(integer(v, key));
    else if (key == "sigma_upper_bounds") {
      try {
        model.sigma_upper_bounds = bounds_from_json(v);
      } catch (const FormatError& e) {
        throw std::invalid_argument(e.what());
      }
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  train.validate();
  loss.validate();
  if (model.stages < 1 || model.stages > kMaxStages) throw std::invalid_argument("stages must be 1..3");
}

RoiRect parse_roi(const std::string& text) {
  RoiRect r;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream in(text);
  if (!(in >> r.x0 >> c1 >> r.y0 >> c2 >> r.x1 >> c3 >> r.y1) || c1 != ',' || c2 != ',' || c3 != ',' ||
      !(in >> std::ws).eof()) {
    throw std::invalid_argument("ROI must be 'x0,y0,x1,y1', got '" + text + "'");
  }
  return r;
}

Service::Service(ServiceConfig config) : config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
  if (config_.workdir.empty()) throw std::invalid_argument("service needs a workdir");
  fs::create_directories(config_.workdir / "sessions");
  int n = config_.workers;
  if (n <= 0) n = std::max(1, static_cast<int>(std::thread::hardware_concurrency()) / 2);
  install_routes(*server_);
  restore();
  for (int i = 0; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  for (auto& w : workers_) w.join();
  if (server_thread_.joinable()) server_thread_.join();
}

fs::path Service::session_dir(const std::string& id) const { return config_.workdir / "sessions" / id; }

std::shared_ptr<Session> Service::find(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

bool Service::wait_until_settled(const std::string& id, std::chrono::milliseconds timeout) const {
  auto s = find(id);
  if (!s) return false;
  auto settled = [&] {
    std::lock_guard lock(s->mutex);
    return s->state == SessionState::ready || s->state == SessionState::failed;
  };
  std::unique_lock lock(settled_mutex_);
  return settled_cv_.wait_for(lock, timeout, settled);
}

// Caller holds the session mutex.
void Service::persist(const Session& s) const {
  const fs::path dir = session_dir(s.id);
  fs::create_directories(dir);
  json meta = {{"id", s.id},
               {"state", to_string(s.state)},
               {"config", config_to_json(s.train, s.loss, s.model_cfg)},
               {"width", s.input.width()},
               {"height", s.input.height()},
               {"pad", {{"left", s.pad.left}, {"right", s.pad.right}, {"top", s.pad.top}, {"bottom", s.pad.bottom}}},
               {"created_at", s.created_at},
               {"updated_at", s.updated_at}};
  if (!s.error.empty()) meta["error"] = s.error;
  json edits = json::array();
  for (const auto& e : s.edits) edits.push_back(edit_to_json(e));
  write_text_file(dir / "edits.json", edits.dump(1));
  write_text_file(dir / "session.json", meta.dump(1));
}

std::shared_ptr<Session> Service::create_session(Image input, const json& overrides) {
  auto s = std::make_shared<Session>();
  s->train = config_.train;
  s->loss = config_.loss;
  s->model_cfg = config_.model;
  apply_overrides(overrides, s->train, s->loss, s->model_cfg);
  s->id = new_session_id();
  auto [padded, pad] = pad_to_multiple(input, 2 * s->model_cfg.patch_size);
  s->input = std::move(input);
  s->padded = std::move(padded);
  s->pad = pad;
  s->created_at = s->updated_at = timestamp_now();
  return s;
}

void Service::restore() {
  for (const auto& entry : fs::directory_iterator(config_.workdir / "sessions")) {
    if (!entry.is_directory()) continue;
    const fs::path dir = entry.path();
    try {
      const json meta = read_json_file(dir / "session.json");
      Image input = decode_png(read_bytes(dir / "input.png"));
      auto s = create_session(std::move(input), meta.at("config"));
      s->id = meta.at("id").get<std::string>();
      s->state = parse_session_state(meta.at("state").get<std::string>());
      s->created_at = meta.value("created_at", s->created_at);
      s->updated_at = meta.value("updated_at", s->updated_at);
      s->error = meta.value("error", "");
      s->edits = edits_from_json(read_json_file(dir / "edits.json"));
      if (s->state == SessionState::ready) {
        s->model = load_checkpoint(dir / "checkpoint.json");
        s->base_maps = load_sigma_maps(dir / "maps");
        if (s->base_maps.size() != s->model->stages.size()) throw FormatError("stage count of maps and checkpoint differ");
        s->denoised = crop_with(refilter(s->padded, *s->model, s->base_maps), s->pad);
        s->edited_maps = replay_edits(*s);
        s->epochs_done = s->train.epochs;
        const json report = read_json_file(dir / "report.json");
        s->loss_history = report.at("loss").get<std::vector<double>>();
        std::lock_guard lock(sessions_mutex_);
        sessions_[s->id] = s;
      } else if (s->state == SessionState::failed) {
        std::lock_guard lock(sessions_mutex_);
        sessions_[s->id] = s;
      } else {
        // Interrupted training restarts from scratch; it is deterministic.
        s->edits.clear();
        s->state = SessionState::training;
        {
          std::lock_guard lock(sessions_mutex_);
          sessions_[s->id] = s;
        }
        enqueue(s);
      }
    } catch (const std::exception& e) {
      std::fprintf(stderr, "zsd: skipping session directory %s: %s\n", dir.string().c_str(), e.what());
    }
  }
}

void Service::enqueue(const std::shared_ptr<Session>& session) {
  session->queued = true;
  {
    std::lock_guard lock(queue_mutex_);
    queue_.push_back(session);
  }
  queue_cv_.notify_one();
}

void Service::worker_loop() {
  for (;;) {
    std::shared_ptr<Session> s;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      s = queue_.front();
      queue_.pop_front();
    }
    s->queued = false;
    train_session(s);
    {
      std::lock_guard lock(settled_mutex_);
    }
    settled_cv_.notify_all();
  }
}

void Service::train_session(const std::shared_ptr<Session>& s) {
  Image input;
  TrainConfig train;
  LossConfig loss;
  ModelConfig model_cfg;
  {
    std::lock_guard lock(s->mutex);
    if (s->state != SessionState::training) return;
    input = s->input;
    train = s->train;
    loss = s->loss;
    model_cfg = s->model_cfg;
    s->loss_history.clear();
    s->epochs_done = 0;
  }
  auto progress = [&](int epoch, double value) {
    {
      std::lock_guard lock(s->mutex);
      s->loss_history.push_back(value);
    }
    s->epochs_done = epoch + 1;
    return !stopping_.load();
  };
  try {
    TrainResult result = train_single_image(input, train, loss, model_cfg, progress);
    if (stopping_ && s->epochs_done < train.epochs) return;  // resumed on the next start
    DenoiseResult d = denoise(s->padded, result.model);
    const fs::path dir = session_dir(s->id);
    save_checkpoint(result.model, dir / "checkpoint.json");
    export_sigma_maps(d.maps, dir / "maps", result.model.patch_size);
    write_text_file(dir / "report.json", training_report_json(result.report, train, loss, model_cfg).dump());
    std::lock_guard lock(s->mutex);
    s->model = std::move(result.model);
    s->base_maps = d.maps;
    s->edited_maps = std::move(d.maps);
    s->denoised = crop_with(d.image, s->pad);
    s->refiltered.reset();
    s->state = SessionState::ready;
    s->updated_at = timestamp_now();
    persist(*s);
  } catch (const std::exception& e) {
    std::lock_guard lock(s->mutex);
    s->state = SessionState::failed;
    s->error = e.what();
    s->updated_at = timestamp_now();
    try {
      persist(*s);
    } catch (const std::exception& pe) {
      std::fprintf(stderr, "zsd: cannot persist session %s: %s\n", s->id.c_str(), pe.what());
    }
  }
}

void Service::install_routes(httplib::Server& server) {
  server.set_payload_max_length(config_.max_upload_bytes);
  server.set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin},
                              {"Access-Control-Expose-Headers",
                               "X-Variant, X-Width, X-Height, X-Edit-Count, X-Psnr-Vs-Input, X-Ssim-Vs-Input"}});
  // SO_REUSEPORT (the library default) would let a second server share a busy port.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });

  // Every handler reports failures as {"error": ...} with the mapped status.
  auto wrap = [](auto handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const HttpError& e) {
        send_error(res, e.status(), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  };

  server.Options(".*", [this](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, PATCH, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  server.Get("/healthz", wrap([](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, {{"status", "ok"}});
             }));

  server.Get("/sessions", wrap([this](const httplib::Request&, httplib::Response& res) {
               std::vector<std::shared_ptr<Session>> all;
               {
                 std::lock_guard lock(sessions_mutex_);
                 for (const auto& [id, s] : sessions_) all.push_back(s);
               }
               json list = json::array();
               for (const auto& s : all) {
                 std::lock_guard lock(s->mutex);
                 list.push_back(session_json(*s));
               }
               send_json(res, 200, {{"sessions", list}});
             }));

  server.Post("/sessions", wrap([this](const httplib::Request& req, httplib::Response& res) {
                if (!req.is_multipart_form_data() || !req.has_file("image")) {
                  throw HttpError(400, "expected multipart form data with an 'image' part");
                }
                const std::string& content = req.get_file_value("image").content;
                const std::vector<std::uint8_t> bytes(content.begin(), content.end());
                Image input;
                try {
                  input = decode_png(bytes);
                } catch (const std::exception& e) {
                  throw HttpError(400, std::string("cannot decode image: ") + e.what());
                }
                json overrides;
                if (req.has_file("config")) {
                  try {
                    overrides = json::parse(req.get_file_value("config").content);
                  } catch (const json::exception& e) {
                    throw HttpError(400, std::string("config is not valid JSON: ") + e.what());
                  }
                }
                std::shared_ptr<Session> s;
                try {
                  s = create_session(std::move(input), overrides);
                } catch (const std::invalid_argument& e) {
                  throw HttpError(400, e.what());
                }
                {
                  std::lock_guard lock(s->mutex);
                  s->state = SessionState::training;
                  const fs::path dir = session_dir(s->id);
                  fs::create_directories(dir);
                  write_bytes(dir / "input.png", bytes);
                  persist(*s);
                }
                {
                  std::lock_guard lock(sessions_mutex_);
                  sessions_[s->id] = s;
                }
                enqueue(s);
                send_json(res, 202, {{"id", s->id}, {"state", to_string(SessionState::training)}});
              }));

  const std::string id = "/sessions/([0-9a-f]+)";

  server.Get(id, wrap([this](const httplib::Request& req, httplib::Response& res) {
               auto s = lookup(*this, req);
               std::lock_guard lock(s->mutex);
               send_json(res, 200, session_json(*s));
             }));

  server.Get(id + "/result", wrap([this](const httplib::Request& req, httplib::Response& res) {
               auto s = lookup(*this, req);
               const std::string variant = req.has_param("variant") ? req.get_param_value("variant") : "denoised";
               if (variant != "denoised" && variant != "refiltered") {
                 throw HttpError(400, "variant must be 'denoised' or 'refiltered'");
               }
               std::lock_guard lock(s->mutex);
               require_ready(*s);
               const Image& out = variant == "denoised" ? *s->denoised : refiltered_image(*s);
               const auto png = encode_png(out, 16);
               res.set_header("X-Variant", variant);
               res.set_header("X-Width", std::to_string(out.width()));
               res.set_header("X-Height", std::to_string(out.height()));
               res.set_header("X-Edit-Count", std::to_string(s->edits.size()));
               res.set_header("X-Psnr-Vs-Input", psnr_to_json(psnr(out, s->input)).dump());
               res.set_header("X-Ssim-Vs-Input",
                              out.width() >= 11 && out.height() >= 11 ? json(ssim(out, s->input)).dump() : "null");
               res.status = 200;
               res.set_content(std::string(png.begin(), png.end()), "image/png");
             }));

  server.Get(id + R"(/sigma/(\d+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
               auto s = lookup(*this, req);
               std::lock_guard lock(s->mutex);
               require_ready(*s);
               const std::string stage_text = req.matches[2];
               if (stage_text.size() > 2 || std::stoul(stage_text) >= s->base_maps.size()) {
                 throw HttpError(404, "no stage " + stage_text);
               }
               const int stage = std::stoi(stage_text);
               json j = sigma_maps_to_json(s->base_maps[stage], stage);
               json edited = sigma_maps_to_json(s->edited_maps[stage], stage);
               j["edited"] = {{"sigma_r", edited["sigma_r"]}, {"sigma_x", edited["sigma_x"]}, {"sigma_y", edited["sigma_y"]}};
               j["patch_size"] = s->model->patch_size;
               j["pad"] = {{"left", s->pad.left}, {"right", s->pad.right}, {"top", s->pad.top}, {"bottom", s->pad.bottom}};
               send_json(res, 200, j);
             }));

  server.Patch(id + "/sigma", wrap([this](const httplib::Request& req, httplib::Response& res) {
                 auto s = lookup(*this, req);
                 json body;
                 try {
                   body = json::parse(req.body);
                 } catch (const json::exception& e) {
                   throw HttpError(400, std::string("body is not valid JSON: ") + e.what());
                 }
                 std::lock_guard lock(s->mutex);
                 require_ready(*s);
                 std::vector<SigmaEdit> incoming;
                 bool reset = false, undo = false;
                 if (body.is_object() && body.value("reset", false)) {
                   reset = true;
                 } else if (body.is_object() && body.value("undo", false)) {
                   undo = true;
                 } else {
                   try {
                     incoming = edits_from_json(body);
                   } catch (const FormatError& e) {
                     throw HttpError(422, e.what());
                   }
                 }
                 std::vector<SigmaEdit> log = reset ? std::vector<SigmaEdit>{} : s->edits;
                 if (undo && !log.empty()) log.pop_back();
                 for (const SigmaEdit& e : incoming) {
                   if (e.stage < 0 || e.stage >= static_cast<int>(s->base_maps.size())) {
                     throw HttpError(422, "edit stage " + std::to_string(e.stage) + " out of range");
                   }
                   if (!e.region.valid_for(s->input.width(), s->input.height())) {
                     throw HttpError(422, "edit region is empty or outside the image");
                   }
                   log.push_back(e);
                 }
                 const auto previous = std::move(s->edits);
                 s->edits = std::move(log);
                 try {
                   s->edited_maps = replay_edits(*s);
                 } catch (const std::invalid_argument& e) {
                   s->edits = previous;
                   throw HttpError(422, e.what());
                 }
                 s->refiltered.reset();
                 s->updated_at = timestamp_now();
                 persist(*s);
                 send_json(res, 200, {{"applied_edit_count", incoming.size()}, {"edit_count", s->edits.size()}});
               }));

  server.Post(id + "/refilter", wrap([this](const httplib::Request& req, httplib::Response& res) {
                auto s = lookup(*this, req);
                std::lock_guard lock(s->mutex);
                require_ready(*s);
                s->refiltered.reset();
                const auto start = std::chrono::steady_clock::now();
                refiltered_image(*s);
                const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                send_json(res, 200, {{"status", "ok"}, {"edit_count", s->edits.size()}, {"seconds", seconds}});
              }));

  server.Get(id + "/metrics", wrap([this](const httplib::Request& req, httplib::Response& res) {
               auto s = lookup(*this, req);
               if (!req.has_param("roiSignal") || !req.has_param("roiBg")) {
                 throw HttpError(422, "roiSignal and roiBg are required");
               }
               RoiRect sig, bg;
               try {
                 sig = parse_roi(req.get_param_value("roiSignal"));
                 bg = parse_roi(req.get_param_value("roiBg"));
               } catch (const std::invalid_argument& e) {
                 throw HttpError(422, e.what());
               }
               std::lock_guard lock(s->mutex);
               require_ready(*s);
               try {
                 const double input = cnr(s->input, sig, bg);
                 const double den = cnr(*s->denoised, sig, bg);
                 const double ref = cnr(refiltered_image(*s), sig, bg);
                 send_json(res, 200, {{"cnr_input", input}, {"cnr_denoised", den}, {"cnr_refiltered", ref}});
               } catch (const MetricError& e) {
                 throw HttpError(422, e.what());
               } catch (const std::invalid_argument& e) {
                 throw HttpError(422, e.what());
               }
             }));
}

bool Service::listen(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port)) return false;
  return server_->listen_after_bind();
}

int Service::listen_in_background(const std::string& host) {
  const int port = server_->bind_to_any_port(host);
  if (port <= 0) throw std::runtime_error("cannot bind an ephemeral port");
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::stop() {
  if (server_->is_running()) server_->stop();
  stopping_ = true;
  queue_cv_.notify_all();
}

}  // namespace zsd::service
