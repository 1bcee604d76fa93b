// gateway.hpp - REST + SSE front end over the pipeline.
//
//   POST /v1/sessions                 {"language": "en"}         -> 201 session
//   GET  /v1/sessions/{id}                                       -> session
//   POST /v1/sessions/{id}/events     {"type": ..., "event_id"?} -> session
//   GET  /v1/sessions/{id}/events?after=N                        -> stream messages (polling)
//   GET  /v1/sessions/{id}/menus                                 -> menus
//   GET  /v1/sessions/{id}/stream                                -> text/event-stream
//   GET  /v1/assets/{id}[?format=binary|obj]                     -> record or mesh bytes
//   GET  /v1/metrics/report                                      -> pipeline report
//
// Errors are {"error": {"code", "message"}} with a stable code. Events on one
// session are applied one at a time in arrival order; a repeated event_id
// with the same body replays the stored response.
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mforge/pipeline.hpp"

namespace mforge {

struct ApiConfig {
  std::string bind = "127.0.0.1:8080";  // host:port, port 0 picks a free one
  std::filesystem::path repo_path;      // empty keeps the repository in memory
  std::size_t simplify_target = 1000;
  std::vector<BackendDescriptor> descriptors;
  std::optional<std::string> token;    // shared secret, sent as "Authorization: Bearer ..."
  std::filesystem::path static_dir;    // console build served at "/", when present
  std::filesystem::path fixtures_dir;  // mock fixtures, default MockFixtures::default_dir()

  /// Overrides fields from MFORGE_REPO, MFORGE_BIND and MFORGE_TOKEN.
  ApiConfig with_env() const;
  /// Throws std::invalid_argument (target < 4, malformed bind address).
  void validate() const;
  std::pair<std::string, int> host_port() const;
};

/// Builds backends (HTTP where a descriptor exists, mocks elsewhere) and the
/// repository named by the config. `mock_generator` applies to mock
/// generators only.
std::shared_ptr<Pipeline> make_pipeline(const ApiConfig& config, PipelineConfig base = {},
                                        MockBehaviour mock_generator = {});

class ApiError : public std::runtime_error {
 public:
  ApiError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }
  nlohmann::json body() const { return {{"error", {{"code", code_}, {"message", what()}}}}; }

 private:
  int status_;
  std::string code_;
};

struct ApiResult {
  int status = 200;
  nlohmann::json body;
  bool replayed = false;  // served from the idempotency record
};

/// Transport-free session service; the HTTP server is a thin adapter.
class SessionService {
 public:
  explicit SessionService(std::shared_ptr<Pipeline> pipeline);
  ~SessionService();

  ApiResult create_session(const nlohmann::json& body);
  nlohmann::json get_session(const std::string& id) const;
  ApiResult post_event(const std::string& id, const nlohmann::json& body);
  nlohmann::json menus(const std::string& id) const;
  nlohmann::json asset(const std::string& id) const;
  /// Serialized mesh bytes; throws ApiError for unknown assets or formats.
  std::string asset_bytes(const std::string& id, const std::string& format) const;
  nlohmann::json metrics_report() const;

  /// Stream messages with seq > after. Blocks up to `wait` for a new one;
  /// returns nullopt once the service is shutting down and nothing is left.
  std::optional<std::vector<nlohmann::json>> messages_after(const std::string& id, std::uint64_t after,
                                                            std::chrono::milliseconds wait) const;

  /// Refuses new events, waits for in-flight ones, releases stream readers.
  void shutdown();
  bool shutting_down() const { return shutting_down_.load(); }
  std::size_t in_flight() const { return in_flight_.load(); }

  Pipeline& pipeline() const { return *pipeline_; }
  std::vector<Session> sessions() const;

 private:
  struct Entry;
  std::shared_ptr<Entry> find(const std::string& id) const;
  void on_transition(const Session& session, SessionState from, SessionState to);

  std::shared_ptr<Pipeline> pipeline_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::atomic<bool> shutting_down_{false};
  std::atomic<std::size_t> in_flight_{0};
  mutable std::mutex drain_mu_;
  std::condition_variable drain_cv_;
};

/// The HTTP server. start() binds and serves on a background thread.
class GatewayServer {
 public:
  GatewayServer(ApiConfig config, std::shared_ptr<Pipeline> pipeline);
  explicit GatewayServer(ApiConfig config);
  ~GatewayServer();

  /// Throws std::runtime_error when the address cannot be bound.
  void start();
  /// Blocks until stop() is called from elsewhere (signal handler, test).
  void wait();
  /// Graceful: drains in-flight events, closes streams, then the listener.
  void stop();

  int port() const { return port_; }
  const std::string& host() const { return host_; }
  SessionService& service() { return *service_; }

 private:
  struct Impl;
  ApiConfig config_;
  std::shared_ptr<SessionService> service_;
  std::unique_ptr<Impl> impl_;
  std::string host_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace mforge
