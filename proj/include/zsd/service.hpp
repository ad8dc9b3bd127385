#pragma once

// HTTP facade for interactive denoising sessions. Training runs on a small
// worker pool; everything else is served on the request threads.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "zsd/agbf.hpp"
#include "zsd/image.hpp"
#include "zsd/training.hpp"

namespace httplib {
class Server;
}

namespace zsd::service {

enum class SessionState { created, training, ready, failed };
std::string to_string(SessionState state);
SessionState parse_session_state(const std::string& name);

struct ServiceConfig {
  std::filesystem::path workdir;
  std::size_t max_upload_bytes = 64u << 20;
  /// 0 picks max(1, hardware threads / 2).
  int workers = 0;
  std::string cors_origin = "*";
  TrainConfig train;
  LossConfig loss;
  ModelConfig model;
};

struct Session {
  std::string id;
  /// Guards everything below except the two atomics.
  std::mutex mutex;
  SessionState state = SessionState::created;
  Image input;
  Image padded;
  PadInfo pad;
  TrainConfig train;
  LossConfig loss;
  ModelConfig model_cfg;
  std::optional<DenoiserModel> model;
  std::vector<SigmaMaps> base_maps, edited_maps;
  std::vector<SigmaEdit> edits;  // pixel coordinates of the uploaded image
  std::optional<Image> denoised, refiltered;  // cropped
  std::vector<double> loss_history;
  std::string error;
  std::string created_at, updated_at;

  std::atomic<int> epochs_done{0};
  std::atomic<bool> queued{false};
};

/// Session store, training queue and HTTP routes. All state lives in memory
/// and is mirrored to one directory per session under workdir/sessions.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void install_routes(httplib::Server& server);

  /// Binds and serves until stop(); returns false if the port cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds to an ephemeral port and serves on a background thread.
  int listen_in_background(const std::string& host);
  void stop();

  int worker_count() const { return static_cast<int>(workers_.size()); }
  std::shared_ptr<Session> find(const std::string& id) const;
  /// Blocks until the session leaves the training state or the timeout passes.
  bool wait_until_settled(const std::string& id, std::chrono::milliseconds timeout) const;

 private:
  void restore();
  void enqueue(const std::shared_ptr<Session>& session);
  void worker_loop();
  void train_session(const std::shared_ptr<Session>& session);
  void persist(const Session& session) const;
  std::filesystem::path session_dir(const std::string& id) const;
  std::shared_ptr<Session> create_session(Image input, const nlohmann::json& overrides);

  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  mutable std::condition_variable settled_cv_;
  mutable std::mutex settled_mutex_;
  std::deque<std::shared_ptr<Session>> queue_;
  std::atomic<bool> stopping_{false};
  std::vector<std::thread> workers_;
};

/// Applies the JSON config overrides accepted by POST /sessions; throws
/// std::invalid_argument on unknown keys or bad values.
void apply_overrides(const nlohmann::json& overrides, TrainConfig& train, LossConfig& loss, ModelConfig& model);

/// "x0,y0,x1,y1"
RoiRect parse_roi(const std::string& text);

}  // namespace zsd::service
