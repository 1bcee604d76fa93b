#include "mforge/gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>

#include "mforge/mesh_io.hpp"

namespace mforge {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

ApiConfig ApiConfig::with_env() const {
  ApiConfig c = *this;
  if (const char* v = std::getenv("MFORGE_REPO"); v && *v) c.repo_path = v;
  if (const char* v = std::getenv("MFORGE_BIND"); v && *v) c.bind = v;
  if (const char* v = std::getenv("MFORGE_TOKEN"); v && *v) c.token = std::string(v);
  return c;
}

std::pair<std::string, int> ApiConfig::host_port() const {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == bind.size()) {
    throw std::invalid_argument("bind address must be host:port, got '" + bind + "'");
  }
  const std::string host = bind.substr(0, colon);
  const std::string port_text = bind.substr(colon + 1);
  if (port_text.find_first_not_of("0123456789") != std::string::npos || port_text.size() > 5) {
    throw std::invalid_argument("bad port in bind address '" + bind + "'");
  }
  const int port = std::stoi(port_text);
  if (port > 65535) throw std::invalid_argument("port out of range in '" + bind + "'");
  return {host, port};
}

void ApiConfig::validate() const {
  if (simplify_target < kMinTargetVertices) throw std::invalid_argument("simplify target must be at least 4");
  host_port();
  if (token && token->empty()) throw std::invalid_argument("token must not be empty");
}

std::shared_ptr<Pipeline> make_pipeline(const ApiConfig& config, PipelineConfig base, MockBehaviour mock_generator) {
  config.validate();
  const auto fixtures = MockFixtures::load(config.fixtures_dir.empty() ? MockFixtures::default_dir()
                                                                       : config.fixtures_dir);
  auto backends = make_backends(config.descriptors, fixtures);
  auto described = [&](BackendKind kind) {
    return std::any_of(config.descriptors.begin(), config.descriptors.end(),
                       [&](const BackendDescriptor& d) { return d.kind == kind; });
  };
  if (!described(BackendKind::TextTo3D)) backends.text_to_3d = std::make_shared<MockTextTo3D>(mock_generator);
  if (!described(BackendKind::ImageTo3D)) backends.image_to_3d = std::make_shared<MockImageTo3D>(mock_generator);

  std::shared_ptr<EmbeddingProvider> provider = std::make_shared<HashingEmbeddingProvider>();
  for (const auto& d : config.descriptors) {
    if (d.kind == BackendKind::TextEmbed) {
      const auto dim = d.parameters.value("dimension", kDefaultEmbeddingDimension);
      provider = std::make_shared<HttpEmbeddingProvider>(d, dim);
    }
  }
  RepositoryConfig rc;
  rc.dimension = provider->dimension();
  auto repo = config.repo_path.empty() ? std::make_shared<Repository>(rc, provider)
                                       : std::make_shared<Repository>(config.repo_path, rc, provider);
  base.simplify.target_vertices = config.simplify_target;
  return std::make_shared<Pipeline>(std::move(backends), std::move(repo), base);
}

// ---------------------------------------------------------------------------
// Session service

struct SessionService::Entry {
  std::mutex mu;
  std::condition_variable cv;  // turn changes and new messages
  Session session;             // last published snapshot
  std::vector<json> messages;  // message seq == index + 1
  std::uint64_t next_ticket = 0;
  std::uint64_t serving = 0;
  std::map<std::string, std::pair<std::string, ApiResult>> replies;  // event id -> (body, result)
};

namespace {

std::int64_t unix_millis() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

json state_message(const Session& s, std::optional<SessionState> from, std::uint64_t seq) {
  json m{{"seq", seq}, {"session", s.id}, {"state", to_string(s.state)}, {"at", unix_millis()}};
  m["from"] = from ? json(to_string(*from)) : json(nullptr);
  if (s.state == SessionState::Offers || s.state == SessionState::Suggestions) {
    if (s.menus) m["menus"] = s.menus->to_json();
  }
  if (s.state == SessionState::Presenting && s.asset) m["asset"] = *s.asset;
  if (s.state == SessionState::Failed && s.error) {
    m["error"] = {{"code", s.error->code}, {"message", s.error->message}, {"retriable", s.error->retriable}};
  }
  return m;
}

ApiResult error_result(const ApiError& e) { return {e.status(), e.body(), false}; }

}  // namespace

SessionService::SessionService(std::shared_ptr<Pipeline> pipeline) : pipeline_(std::move(pipeline)) {
  if (!pipeline_) throw std::invalid_argument("session service needs a pipeline");
  pipeline_->set_observer(
      [this](const Session& s, SessionState from, SessionState to) { on_transition(s, from, to); });
}

SessionService::~SessionService() { pipeline_->set_observer({}); }

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) const {
  std::shared_lock lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ApiError(404, "session_not_found", "no session '" + id + "'");
  return it->second;
}

void SessionService::on_transition(const Session& s, SessionState from, SessionState) {
  std::shared_ptr<Entry> entry;
  {
    std::shared_lock lock(mu_);
    const auto it = sessions_.find(s.id);
    if (it == sessions_.end()) return;
    entry = it->second;
  }
  std::lock_guard lock(entry->mu);
  entry->session = s;
  entry->messages.push_back(state_message(s, from, entry->messages.size() + 1));
  entry->cv.notify_all();
}

ApiResult SessionService::create_session(const json& body) {
  if (shutting_down_) throw ApiError(503, "shutting_down", "the service is shutting down");
  if (!body.is_object()) throw ApiError(400, "invalid_request", "body must be a JSON object");
  std::string language = "en";
  if (body.contains("language")) {
    if (!body["language"].is_string()) throw ApiError(400, "invalid_request", "'language' must be a string");
    language = body["language"].get<std::string>();
  }
  Session s;
  try {
    s = pipeline_->create_session(language);
  } catch (const std::invalid_argument& e) {
    throw ApiError(400, "invalid_language", e.what());
  }
  auto entry = std::make_shared<Entry>();
  entry->session = s;
  entry->messages.push_back(state_message(s, std::nullopt, 1));
  {
    std::unique_lock lock(mu_);
    sessions_[s.id] = entry;
  }
  return {201, s.to_json(), false};
}

json SessionService::get_session(const std::string& id) const {
  auto entry = find(id);
  std::lock_guard lock(entry->mu);
  return entry->session.to_json();
}

ApiResult SessionService::post_event(const std::string& id, const json& body) {
  if (shutting_down_) throw ApiError(503, "shutting_down", "the service is shutting down");
  auto entry = find(id);

  ApiEvent event;
  try {
    event = ApiEvent::from_json(body);
  } catch (const std::invalid_argument& e) {
    throw ApiError(400, "invalid_event", e.what());
  }

  ++in_flight_;
  struct Drain {
    SessionService* self;
    ~Drain() {
      std::lock_guard lock(self->drain_mu_);
      --self->in_flight_;
      self->drain_cv_.notify_all();
    }
  } drain{this};

  // Per-session FIFO: tickets in arrival order.
  std::unique_lock lock(entry->mu);
  const auto ticket = entry->next_ticket++;
  entry->cv.wait(lock, [&] { return entry->serving == ticket; });
  struct Turn {
    Entry& e;
    std::unique_lock<std::mutex>& lock;
    ~Turn() {
      if (!lock.owns_lock()) lock.lock();
      ++e.serving;
      e.cv.notify_all();
    }
  } turn{*entry, lock};

  const std::string fingerprint = body.dump();
  if (event.event_id) {
    if (const auto it = entry->replies.find(*event.event_id); it != entry->replies.end()) {
      if (it->second.first != fingerprint) {
        return error_result(ApiError(409, "event_id_conflict",
                                     "event id '" + *event.event_id + "' was used for a different event"));
      }
      ApiResult replay = it->second.second;
      replay.replayed = true;
      return replay;
    }
  }

  Session work = entry->session;
  lock.unlock();

  ApiResult result;
  try {
    pipeline_->handle(work, event);
    result = {200, work.to_json(), false};
  } catch (const IllegalTransition& e) {
    auto err = ApiError(409, "illegal_transition", e.what()).body();
    err["error"]["state"] = to_string(e.from());
    result = {409, err, false};
  } catch (const std::invalid_argument& e) {
    result = error_result(ApiError(400, "invalid_event", e.what()));
  } catch (const std::exception& e) {
    result = error_result(ApiError(500, "internal", e.what()));
  }

  lock.lock();
  if (result.status == 200) entry->session = std::move(work);
  if (event.event_id) entry->replies[*event.event_id] = {fingerprint, result};
  return result;
}

json SessionService::menus(const std::string& id) const {
  auto entry = find(id);
  std::lock_guard lock(entry->mu);
  const auto& s = entry->session;
  if (!s.menus) {
    throw ApiError(409, "menus_unavailable", std::string("no menus in state ") + to_string(s.state));
  }
  json j = s.menus->to_json();
  j["state"] = to_string(s.state);
  return j;
}

json SessionService::asset(const std::string& id) const {
  const auto rec = pipeline_->repository().get(id);
  if (!rec) throw ApiError(404, "asset_not_found", "no asset '" + id + "'");
  const Mesh mesh = pipeline_->repository().get_mesh(rec->mesh_ref);
  return {{"id", rec->id},
          {"label", rec->label},
          {"source", to_string(rec->source)},
          {"mesh_ref", rec->mesh_ref},
          {"created_at", rec->created_at},
          {"hit_count", rec->hit_count},
          {"dimension", rec->embedding.dimension()},
          {"vertices", mesh.vertices.size()},
          {"faces", mesh.faces.size()},
          {"binary_bytes", compact_binary_size(mesh.vertices.size(), mesh.faces.size())}};
}

std::string SessionService::asset_bytes(const std::string& id, const std::string& format) const {
  const auto fmt = parse_format(format);
  if (!fmt) throw ApiError(400, "unsupported_format", "unknown mesh format '" + format + "'");
  const auto rec = pipeline_->repository().get(id);
  if (!rec) throw ApiError(404, "asset_not_found", "no asset '" + id + "'");
  return write_mesh(pipeline_->repository().get_mesh(rec->mesh_ref), *fmt);
}

std::vector<Session> SessionService::sessions() const {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::shared_lock lock(mu_);
    for (const auto& [id, e] : sessions_) entries.push_back(e);
  }
  std::vector<Session> out;
  for (const auto& e : entries) {
    std::lock_guard lock(e->mu);
    out.push_back(e->session);
  }
  return out;
}

json SessionService::metrics_report() const {
  const auto all = sessions();
  return report_metrics(all);
}

std::optional<std::vector<json>> SessionService::messages_after(const std::string& id, std::uint64_t after,
                                                                std::chrono::milliseconds wait) const {
  auto entry = find(id);
  std::unique_lock lock(entry->mu);
  entry->cv.wait_for(lock, wait, [&] { return entry->messages.size() > after || shutting_down_.load(); });
  if (entry->messages.size() <= after) {
    if (shutting_down_) return std::nullopt;
    return std::vector<json>{};
  }
  return std::vector<json>(entry->messages.begin() + static_cast<std::ptrdiff_t>(after), entry->messages.end());
}

void SessionService::shutdown() {
  shutting_down_ = true;
  {
    std::unique_lock lock(drain_mu_);
    drain_cv_.wait(lock, [&] { return in_flight_.load() == 0; });
  }
  std::shared_lock lock(mu_);
  for (const auto& [id, e] : sessions_) {
    std::lock_guard el(e->mu);
    e->cv.notify_all();
  }
}

// ---------------------------------------------------------------------------
// HTTP

struct GatewayServer::Impl {
  httplib::Server server;
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ApiError& e) {
      send_json(res, e.status(), e.body());
    } catch (const json::exception& e) {
      send_json(res, 400, ApiError(400, "invalid_json", e.what()).body());
    } catch (const RepositoryError& e) {
      send_json(res, 500, ApiError(500, "repository_error", e.what()).body());
    } catch (const std::exception& e) {
      send_json(res, 500, ApiError(500, "internal", e.what()).body());
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

}  // namespace

GatewayServer::GatewayServer(ApiConfig config, std::shared_ptr<Pipeline> pipeline)
    : config_(std::move(config)),
      service_(std::make_shared<SessionService>(std::move(pipeline))),
      impl_(std::make_unique<Impl>()) {
  config_.validate();
}

GatewayServer::GatewayServer(ApiConfig config) : GatewayServer(config, make_pipeline(config)) {}

GatewayServer::~GatewayServer() { stop(); }

void GatewayServer::start() {
  auto& srv = impl_->server;
  auto svc = service_;

  // Stream readers hold a worker each; leave room for them.
  srv.new_task_queue = [] { return new httplib::ThreadPool(32); };

  const auto token = config_.token;
  srv.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
    if (!token || req.path.rfind("/v1/", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
    const auto auth = req.get_header_value("Authorization");
    if (auth == "Bearer " + *token || req.get_header_value("X-Mforge-Token") == *token) {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    send_json(res, 401, ApiError(401, "unauthorized", "missing or wrong token").body());
    return httplib::Server::HandlerResponse::Handled;
  });

  srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404 ? "not_found" : "http_" + std::to_string(res.status);
    send_json(res, res.status, ApiError(res.status, code, "no route for " + req.method + " " + req.path).body());
  });

  srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"ok", true}}); });

  srv.Post("/v1/sessions", guarded([svc](const httplib::Request& req, httplib::Response& res) {
             const auto r = svc->create_session(parse_body(req));
             send_json(res, r.status, r.body);
           }));

  srv.Get(R"(/v1/sessions/([^/]+))", guarded([svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, svc->get_session(req.matches[1]));
          }));

  srv.Post(R"(/v1/sessions/([^/]+)/events)", guarded([svc](const httplib::Request& req, httplib::Response& res) {
             const auto r = svc->post_event(req.matches[1], parse_body(req));
             if (r.replayed) res.set_header("Idempotent-Replay", "true");
             send_json(res, r.status, r.body);
           }));

  srv.Get(R"(/v1/sessions/([^/]+)/events)", guarded([svc](const httplib::Request& req, httplib::Response& res) {
            std::uint64_t after = 0;
            if (req.has_param("after")) after = std::stoull(req.get_param_value("after"));
            auto wait = std::chrono::milliseconds(0);
            if (req.has_param("wait_ms")) wait = std::chrono::milliseconds(std::stoll(req.get_param_value("wait_ms")));
            wait = std::min(wait, std::chrono::milliseconds(30000));
            const auto msgs = svc->messages_after(req.matches[1], after, wait);
            send_json(res, 200, {{"messages", msgs ? *msgs : std::vector<json>{}}});
          }));

  srv.Get(R"(/v1/sessions/([^/]+)/menus)", guarded([svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, svc->menus(req.matches[1]));
          }));

  srv.Get(R"(/v1/sessions/([^/]+)/stream)", guarded([svc](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            svc->get_session(id);  // 404 before the stream opens
            std::uint64_t after = 0;
            if (req.has_header("Last-Event-ID")) after = std::stoull(req.get_header_value("Last-Event-ID"));
            if (req.has_param("after")) after = std::stoull(req.get_param_value("after"));
            auto cursor = std::make_shared<std::uint64_t>(after);
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider(
                "text/event-stream", [svc, id, cursor](std::size_t, httplib::DataSink& sink) {
                  if (!sink.is_writable()) return false;
                  const auto msgs = svc->messages_after(id, *cursor, std::chrono::milliseconds(15000));
                  if (!msgs) {
                    sink.done();
                    return true;
                  }
                  std::string out;
                  if (msgs->empty()) out = ": keepalive\n\n";
                  for (const auto& m : *msgs) {
                    *cursor = m["seq"].get<std::uint64_t>();
                    out += "id: " + std::to_string(*cursor) + "\nevent: state\ndata: " + m.dump() + "\n\n";
                  }
                  return sink.write(out.data(), out.size());
                });
          }));

  srv.Get(R"(/v1/assets/([^/]+))", guarded([svc](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            if (!req.has_param("format") || req.get_param_value("format") == "json") {
              send_json(res, 200, svc->asset(id));
              return;
            }
            const auto format = req.get_param_value("format");
            const auto bytes = svc->asset_bytes(id, format);
            const bool text = parse_format(format) == MeshFormat::TextObj;
            res.status = 200;
            res.set_content(bytes, text ? "text/plain" : "application/octet-stream");
          }));

  srv.Get("/v1/metrics/report", guarded([svc](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, svc->metrics_report());
          }));

  if (!config_.static_dir.empty() && std::filesystem::is_directory(config_.static_dir)) {
    srv.set_mount_point("/", config_.static_dir.string());
  }

  const auto [host, port] = config_.host_port();
  host_ = host;
  if (port == 0) {
    port_ = srv.bind_to_any_port(host);
    if (port_ < 0) throw std::runtime_error("cannot bind " + host);
  } else {
    if (!srv.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + config_.bind);
    port_ = port;
  }
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
}

void GatewayServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void GatewayServer::stop() {
  if (!impl_) return;
  service_->shutdown();
  impl_->server.stop();
  if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) thread_.join();
}

}  // namespace mforge
