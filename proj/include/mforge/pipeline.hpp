// pipeline.hpp - per-session orchestration: the status-board state machine,
// the three offer menus, the cache-or-generate decision and stage timings.
//
// Speech path:  Welcome -wake-> Listening -stop-> Thinking -menus-> Offers
//               -selection-> Baking -asset-> Presenting -wake-> Listening
// Image path:   Welcome -capture-> Observing -vlm reply-> Suggestions
//               -selection-> Baking -asset-> Presenting
// Any state but Failed moves to Failed on a backend error. Failed is final.
#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mforge/backends.hpp"
#include "mforge/recommend.hpp"
#include "mforge/repository.hpp"
#include "mforge/simplify.hpp"

namespace mforge {

enum class SessionState { Welcome, Listening, Thinking, Offers, Baking, Presenting, Observing, Suggestions, Failed };

const char* to_string(SessionState state);
std::optional<SessionState> parse_session_state(std::string_view name);

/// Internal triggers of the state machine. API events map onto these.
enum class Trigger { Wake, Stop, MenusReady, Capture, VlmReply, Selection, AssetReady, BackendError };

const char* to_string(Trigger trigger);

/// Target state, or nullopt when the edge is not declared.
std::optional<SessionState> transition(SessionState from, Trigger trigger);
bool is_declared_edge(SessionState from, SessionState to);

class IllegalTransition : public std::logic_error {
 public:
  IllegalTransition(SessionState from, std::string event);
  SessionState from() const { return from_; }
  const std::string& event() const { return event_; }

 private:
  SessionState from_;
  std::string event_;
};

struct RepositoryOffer {
  std::string label;
  std::string asset_id;
  double score = 0.0;
};

struct OfferMenus {
  std::vector<std::string> detected;
  std::vector<RepositoryOffer> repository;  // score descending
  std::vector<ObjectSuggestion> recommended;  // filter.kept
  FilterResult filter;  // kept, dropped (already in the scene), cache_available
  std::optional<SceneLocation> location;
  double novelty = 0.0;                      // recommended labels against earlier offers
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

enum class MenuSource { Detected, Repository, Recommended };

const char* to_string(MenuSource source);
std::optional<MenuSource> parse_menu_source(std::string_view name);

struct Selection {
  MenuSource source = MenuSource::Detected;
  std::size_t index = 0;
};

/// Wall-clock seconds per stage of one task. time_to_object is generate +
/// simplify when generation ran and retrieve on a cache hit.
struct StageTimings {
  double transcribe = 0.0;
  double extract = 0.0;  // object extraction (speech) or detection (image)
  double recommend = 0.0;
  double repo_search = 0.0;
  double retrieve = 0.0;  // cache hit: record lookup and blob fetch
  double generate = 0.0;
  double simplify = 0.0;
  double deliver = 0.0;  // store and publish the served asset
  double time_to_object = 0.0;
  double responsiveness = 0.0;      // request end (stop or capture) to menus
  double wait_for_selection = 0.0;  // user think-time in the menus
  double task_completion = 0.0;     // wake or capture to Presenting, think-time included

  nlohmann::json to_json() const;
};

struct SessionError {
  std::string code;
  std::string message;
  bool retriable = false;
  nlohmann::json details = nlohmann::json::object();
};

enum class TaskPath { Speech, Image };

/// One request from wake (or capture) to its outcome.
struct TaskRecord {
  TaskPath path = TaskPath::Speech;
  std::string label;
  bool finished = false;
  bool success = false;
  bool cache_hit = false;
  bool generator_invoked = false;
  std::string asset_id;
  std::size_t raw_bytes = 0;  // compact binary, before simplification
  std::size_t served_bytes = 0;
  std::size_t raw_vertices = 0;
  std::size_t served_vertices = 0;
  bool guard_blocked = false;
  std::optional<std::string> error_code;
  StageTimings timings;
  std::vector<std::string> recommended;  // labels offered in this task
  FilterResult offer_filter;             // for the duplicate rate

  nlohmann::json to_json() const;
};

struct Session {
  std::string id;
  std::string language = "en";
  SessionState state = SessionState::Welcome;
  std::optional<OfferMenus> menus;  // from Offers or Suggestions onward
  std::optional<Selection> selection;
  std::optional<std::string> asset;  // only in Presenting
  StageTimings timings;              // current task
  std::vector<std::vector<std::string>> history;  // recommended labels per offer
  std::vector<SessionState> state_history;
  std::vector<TaskRecord> tasks;
  std::optional<SessionError> error;

  // Request inputs of the current task.
  std::vector<std::string> utterances;
  std::optional<Transcript> transcript;
  std::optional<ImagePayload> image;
  std::optional<LassoPolygon> lasso;
  std::vector<DetectionBox> detections;

  // Monotonic marks of the current task.
  std::chrono::steady_clock::time_point task_started{};
  std::chrono::steady_clock::time_point request_ended{};
  std::chrono::steady_clock::time_point menus_ready{};

  nlohmann::json to_json() const;
};

/// Applies a trigger. Throws IllegalTransition and leaves the session
/// untouched when the edge is not declared.
Session advance(Session session, Trigger trigger);

struct PipelineConfig {
  SimplifyConfig simplify;  // target 1000 by default
  double detection_threshold = 0.5;
  std::chrono::milliseconds branch_deadline{10000};
  std::size_t repository_k = 5;
  double repository_min_score = 0.0;
  /// Added to every cache retrieval; models a remote blob store in benchmarks.
  std::chrono::milliseconds retrieval_latency{0};
};

/// External events accepted by a session.
enum class EventType { Wake, Stop, Transcript, Capture, Lasso, Selection };

const char* to_string(EventType type);
std::optional<EventType> parse_event_type(std::string_view name);

struct ApiEvent {
  EventType type = EventType::Wake;
  std::optional<std::string> event_id;  // client id for idempotent retries
  std::string text;                     // transcript: utterance or audio token
  std::optional<ImagePayload> image;    // capture, lasso
  std::optional<LassoPolygon> lasso;    // lasso (required), capture (optional)
  std::optional<Selection> selection;   // selection
  std::optional<std::string> selection_label;  // alternative to the index

  /// Accepts "image_b64" (base64 bytes) or "image" (raw token) plus optional
  /// "width"/"height" (default 640x480). Throws std::invalid_argument.
  static ApiEvent from_json(const nlohmann::json& j);
};

/// Events that are legal in the given state.
bool accepts(SessionState state, EventType type);

/// Builds the menus. Repository search and the recommender run concurrently,
/// each bounded by cfg.branch_deadline; a failed or late branch leaves its
/// list empty and adds a warning. `recommender` receives the designer prompt.
OfferMenus assemble_offers(const std::vector<std::string>& request_labels,
                           const std::optional<SceneDescription>& scene, std::shared_ptr<Repository> repo,
                           std::function<std::string(const std::string&)> recommender, const PipelineConfig& cfg,
                           StageTimings* timings = nullptr);

/// The headless stand-in for the user's choice: first detected entry, else
/// first repository entry, else first recommendation.
std::optional<Selection> first_detected(const OfferMenus& menus);

class Pipeline {
 public:
  using TransitionObserver = std::function<void(const Session&, SessionState from, SessionState to)>;

  Pipeline(Backends backends, std::shared_ptr<Repository> repository, PipelineConfig config = {});

  /// Throws std::invalid_argument for a malformed BCP-47 tag.
  Session create_session(const std::string& language = "en") const;

  /// Applies an external event and runs the automatic steps it starts
  /// (transcription and menus after stop, detection and suggestions after a
  /// capture, fulfilment after a selection). Backend failures move the
  /// session to Failed rather than throwing. Throws IllegalTransition for an
  /// event that is not legal in the current state and std::invalid_argument
  /// for a malformed event; both leave the session unchanged.
  void handle(Session& session, const ApiEvent& event) const;

  /// Serves the selection; the session must be in Baking. Cache hits never
  /// invoke a generator. Throws on failure; handle() turns that into Failed.
  AssetRecord fulfill(Session& session) const;

  void set_observer(TransitionObserver observer) { observer_ = std::move(observer); }

  const PipelineConfig& config() const { return config_; }
  const Backends& backends() const { return backends_; }
  Repository& repository() const { return *repository_; }

 private:
  void move(Session& session, Trigger trigger) const;
  void fail(Session& session, SessionError error) const;
  void run_thinking(Session& session) const;
  void run_observing(Session& session) const;
  void run_baking(Session& session) const;

  Backends backends_;
  std::shared_ptr<Repository> repository_;
  PipelineConfig config_;
  TransitionObserver observer_;
};

/// Aggregates finished tasks into rows named after the evaluation tables:
/// task completion time, success rate, error rate, responsiveness and mesh
/// file size, plus cache and per-stage detail. Empty input gives null values.
nlohmann::json report_metrics(std::span<const Session> sessions);

inline constexpr const char* kReportSchema = "mforge.pipeline-report/1";

}  // namespace mforge
