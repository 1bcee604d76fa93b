#include "mforge/pipeline.hpp"

#include <algorithm>
#include <future>
#include <map>
#include <random>
#include <regex>
#include <thread>

#include "mforge/encoding.hpp"
#include "mforge/mesh_io.hpp"

namespace mforge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

double seconds_since(Clock::time_point t0) { return seconds_between(t0, Clock::now()); }

template <class T>
struct Timed {
  T value;
  double seconds = 0.0;
};

// A detached worker whose result may be abandoned; std::async would block in
// its future destructor and defeat the deadline.
template <class T>
std::shared_future<Timed<T>> launch(std::function<T()> fn) {
  auto promise = std::make_shared<std::promise<Timed<T>>>();
  auto future = promise->get_future().share();
  std::thread([promise, fn = std::move(fn)] {
    const auto t0 = Clock::now();
    try {
      T value = fn();
      promise->set_value(Timed<T>{std::move(value), seconds_since(t0)});
    } catch (...) {
      promise->set_exception(std::current_exception());
    }
  }).detach();
  return future;
}

std::string exception_message(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

bool valid_language_tag(const std::string& tag) {
  static const std::regex re("^[A-Za-z]{2,3}(-[A-Za-z0-9]{1,8})*$");
  return std::regex_match(tag, re);
}

std::string random_id(const char* prefix) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return std::string(prefix) + buf;
}

nlohmann::json suggestion_json(const ObjectSuggestion& s) {
  return {{"name", s.name}, {"color", s.color}, {"shape", s.shape}, {"location", s.location}};
}

SessionError error_from_exception(std::exception_ptr e) {
  try {
    std::rethrow_exception(e);
  } catch (const BackendError& ex) {
    SessionError err{std::string("backend-") + to_string(ex.code()), ex.what(), ex.retriable()};
    if (ex.status() != 0) err.details["status"] = ex.status();
    return err;
  } catch (const ValidationError& ex) {
    SessionError err{"invalid-mesh", ex.what(), false};
    err.details["validation"] = ex.report().summary();
    err.details["violations"] = ex.report().violations.size();
    return err;
  } catch (const RepositoryError& ex) {
    return {"repository-error", ex.what(), ex.code() == RepositoryError::Code::Io};
  } catch (const GeometryError& ex) {
    return {"invalid-crop", ex.what(), false};
  } catch (const std::exception& ex) {
    return {"internal", ex.what(), false};
  } catch (...) {
    return {"internal", "unknown error", false};
  }
}

TaskRecord& current_task(Session& s) {
  if (s.tasks.empty()) throw std::logic_error("session has no active task");
  return s.tasks.back();
}

}  // namespace

// ---------------------------------------------------------------------------
// Names

const char* to_string(SessionState state) {
  switch (state) {
    case SessionState::Welcome: return "Welcome";
    case SessionState::Listening: return "Listening";
    case SessionState::Thinking: return "Thinking";
    case SessionState::Offers: return "Offers";
    case SessionState::Baking: return "Baking";
    case SessionState::Presenting: return "Presenting";
    case SessionState::Observing: return "Observing";
    case SessionState::Suggestions: return "Suggestions";
    case SessionState::Failed: return "Failed";
  }
  return "?";
}

std::optional<SessionState> parse_session_state(std::string_view name) {
  for (auto s : {SessionState::Welcome, SessionState::Listening, SessionState::Thinking, SessionState::Offers,
                 SessionState::Baking, SessionState::Presenting, SessionState::Observing, SessionState::Suggestions,
                 SessionState::Failed}) {
    if (name == to_string(s)) return s;
  }
  return std::nullopt;
}

const char* to_string(Trigger trigger) {
  switch (trigger) {
    case Trigger::Wake: return "wake";
    case Trigger::Stop: return "stop";
    case Trigger::MenusReady: return "menus-ready";
    case Trigger::Capture: return "capture";
    case Trigger::VlmReply: return "vlm-reply";
    case Trigger::Selection: return "selection";
    case Trigger::AssetReady: return "asset-ready";
    case Trigger::BackendError: return "backend-error";
  }
  return "?";
}

const char* to_string(MenuSource source) {
  switch (source) {
    case MenuSource::Detected: return "detected";
    case MenuSource::Repository: return "repository";
    case MenuSource::Recommended: return "recommended";
  }
  return "?";
}

std::optional<MenuSource> parse_menu_source(std::string_view name) {
  for (auto s : {MenuSource::Detected, MenuSource::Repository, MenuSource::Recommended}) {
    if (name == to_string(s)) return s;
  }
  return std::nullopt;
}

const char* to_string(EventType type) {
  switch (type) {
    case EventType::Wake: return "wake";
    case EventType::Stop: return "stop";
    case EventType::Transcript: return "transcript";
    case EventType::Capture: return "capture";
    case EventType::Lasso: return "lasso";
    case EventType::Selection: return "selection";
  }
  return "?";
}

std::optional<EventType> parse_event_type(std::string_view name) {
  for (auto t : {EventType::Wake, EventType::Stop, EventType::Transcript, EventType::Capture, EventType::Lasso,
                 EventType::Selection}) {
    if (name == to_string(t)) return t;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// State machine

std::optional<SessionState> transition(SessionState from, Trigger trigger) {
  using S = SessionState;
  if (trigger == Trigger::BackendError) {
    if (from == S::Failed) return std::nullopt;
    return S::Failed;
  }
  switch (from) {
    case S::Welcome:
      if (trigger == Trigger::Wake) return S::Listening;
      if (trigger == Trigger::Capture) return S::Observing;
      break;
    case S::Listening:
      if (trigger == Trigger::Stop) return S::Thinking;
      break;
    case S::Thinking:
      if (trigger == Trigger::MenusReady) return S::Offers;
      break;
    case S::Offers:
    case S::Suggestions:
      if (trigger == Trigger::Selection) return S::Baking;
      break;
    case S::Observing:
      if (trigger == Trigger::VlmReply) return S::Suggestions;
      break;
    case S::Baking:
      if (trigger == Trigger::AssetReady) return S::Presenting;
      break;
    case S::Presenting:
      if (trigger == Trigger::Wake) return S::Listening;  // a new request
      break;
    case S::Failed:
      break;
  }
  return std::nullopt;
}

bool is_declared_edge(SessionState from, SessionState to) {
  for (auto t : {Trigger::Wake, Trigger::Stop, Trigger::MenusReady, Trigger::Capture, Trigger::VlmReply,
                 Trigger::Selection, Trigger::AssetReady, Trigger::BackendError}) {
    if (transition(from, t) == to) return true;
  }
  return false;
}

IllegalTransition::IllegalTransition(SessionState from, std::string event)
    : std::logic_error(std::string("event '") + event + "' is not accepted in state " + to_string(from)),
      from_(from),
      event_(std::move(event)) {}

Session advance(Session session, Trigger trigger) {
  const auto to = transition(session.state, trigger);
  if (!to) throw IllegalTransition(session.state, to_string(trigger));
  session.state = *to;
  session.state_history.push_back(*to);
  return session;
}

bool accepts(SessionState state, EventType type) {
  using S = SessionState;
  switch (type) {
    case EventType::Wake: return state == S::Welcome || state == S::Presenting;
    case EventType::Stop:
    case EventType::Transcript: return state == S::Listening;
    case EventType::Capture:
    case EventType::Lasso: return state == S::Welcome;
    case EventType::Selection: return state == S::Offers || state == S::Suggestions;
  }
  return false;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json OfferMenus::to_json() const {
  nlohmann::json j;
  j["detected"] = detected;
  j["repository"] = nlohmann::json::array();
  for (const auto& r : repository) {
    j["repository"].push_back({{"label", r.label}, {"asset_id", r.asset_id}, {"score", r.score}});
  }
  j["recommended"] = nlohmann::json::array();
  for (std::size_t i = 0; i < recommended.size(); ++i) {
    auto entry = suggestion_json(recommended[i]);
    entry["cached"] = i < filter.cache_available.size() && filter.cache_available[i];
    j["recommended"].push_back(std::move(entry));
  }
  j["dropped"] = nlohmann::json::array();
  for (const auto& s : filter.dropped) j["dropped"].push_back(suggestion_json(s));
  j["location"] = location ? nlohmann::json{{"name", location->name}, {"description", location->description}}
                           : nlohmann::json(nullptr);
  j["novelty"] = novelty;
  j["warnings"] = warnings;
  return j;
}

nlohmann::json StageTimings::to_json() const {
  return {{"transcribe", transcribe},
          {"extract", extract},
          {"recommend", recommend},
          {"repo_search", repo_search},
          {"retrieve", retrieve},
          {"generate", generate},
          {"simplify", simplify},
          {"deliver", deliver},
          {"time_to_object", time_to_object},
          {"responsiveness", responsiveness},
          {"wait_for_selection", wait_for_selection},
          {"task_completion", task_completion}};
}

nlohmann::json TaskRecord::to_json() const {
  nlohmann::json j{{"path", path == TaskPath::Speech ? "speech" : "image"},
                   {"label", label},
                   {"finished", finished},
                   {"success", success},
                   {"cache_hit", cache_hit},
                   {"generator_invoked", generator_invoked},
                   {"asset_id", asset_id},
                   {"raw_bytes", raw_bytes},
                   {"served_bytes", served_bytes},
                   {"raw_vertices", raw_vertices},
                   {"served_vertices", served_vertices},
                   {"guard_blocked", guard_blocked},
                   {"timings", timings.to_json()},
                   {"recommended", recommended}};
  j["error_code"] = error_code ? nlohmann::json(*error_code) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json Session::to_json() const {
  nlohmann::json j{{"id", id}, {"language", language}, {"state", to_string(state)}};
  j["menus"] = menus ? menus->to_json() : nlohmann::json(nullptr);
  j["selection"] = selection ? nlohmann::json{{"source", to_string(selection->source)}, {"index", selection->index}}
                             : nlohmann::json(nullptr);
  j["asset"] = asset ? nlohmann::json(*asset) : nlohmann::json(nullptr);
  j["timings"] = timings.to_json();
  j["history"] = history;
  j["states"] = nlohmann::json::array();
  for (auto s : state_history) j["states"].push_back(to_string(s));
  j["tasks"] = nlohmann::json::array();
  for (const auto& t : tasks) j["tasks"].push_back(t.to_json());
  if (error) {
    j["error"] = {{"code", error->code}, {"message", error->message}, {"retriable", error->retriable},
                  {"details", error->details}};
  } else {
    j["error"] = nullptr;
  }
  return j;
}

ApiEvent ApiEvent::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("event must be a JSON object");
  if (!j.contains("type") || !j["type"].is_string()) throw std::invalid_argument("event needs a string 'type'");
  const auto type = parse_event_type(j["type"].get<std::string>());
  if (!type) throw std::invalid_argument("unknown event type '" + j["type"].get<std::string>() + "'");

  ApiEvent ev;
  ev.type = *type;
  if (j.contains("event_id") && !j["event_id"].is_null()) {
    if (!j["event_id"].is_string()) throw std::invalid_argument("'event_id' must be a string");
    ev.event_id = j["event_id"].get<std::string>();
  }
  try {
    switch (ev.type) {
      case EventType::Wake:
      case EventType::Stop: break;
      case EventType::Transcript: {
        const char* key = j.contains("text") ? "text" : "audio";
        if (!j.contains(key) || !j[key].is_string()) throw std::invalid_argument("transcript needs 'text' or 'audio'");
        ev.text = j[key].get<std::string>();
        if (ev.text.find_first_not_of(" \t\r\n") == std::string::npos) {
          throw std::invalid_argument("transcript is empty");
        }
        break;
      }
      case EventType::Capture:
      case EventType::Lasso: {
        ImagePayload image;
        if (j.contains("image_b64")) {
          image.bytes = base64_decode(j["image_b64"].get<std::string>());
        } else if (j.contains("image")) {
          image.bytes = j["image"].get<std::string>();
        } else {
          throw std::invalid_argument("capture needs 'image_b64' or 'image'");
        }
        if (image.bytes.empty()) throw std::invalid_argument("image is empty");
        image.size.width = j.value("width", 640);
        image.size.height = j.value("height", 480);
        if (image.size.width <= 0 || image.size.height <= 0) throw std::invalid_argument("image size must be positive");
        ev.image = std::move(image);
        if (j.contains("lasso") && !j["lasso"].is_null()) {
          if (!j["lasso"].is_array()) throw std::invalid_argument("'lasso' must be an array of points");
          ev.lasso = lasso_from_json(j["lasso"]);
          require_valid_polygon(*ev.lasso);
        }
        if (ev.type == EventType::Lasso && !ev.lasso) throw std::invalid_argument("lasso event needs 'lasso'");
        break;
      }
      case EventType::Selection: {
        if (!j.contains("source") || !j["source"].is_string()) throw std::invalid_argument("selection needs 'source'");
        const auto source = parse_menu_source(j["source"].get<std::string>());
        if (!source) throw std::invalid_argument("unknown selection source '" + j["source"].get<std::string>() + "'");
        Selection sel{*source, 0};
        if (j.contains("index")) {
          if (!j["index"].is_number_integer() || j["index"].get<long long>() < 0) {
            throw std::invalid_argument("'index' must be a non-negative integer");
          }
          sel.index = j["index"].get<std::size_t>();
        } else if (j.contains("label") && j["label"].is_string()) {
          ev.selection_label = j["label"].get<std::string>();
        } else {
          throw std::invalid_argument("selection needs 'index' or 'label'");
        }
        ev.selection = sel;
        break;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed event: ") + e.what());
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Offers

OfferMenus assemble_offers(const std::vector<std::string>& request_labels,
                           const std::optional<SceneDescription>& scene, std::shared_ptr<Repository> repo,
                           std::function<std::string(const std::string&)> recommender, const PipelineConfig& cfg,
                           StageTimings* timings) {
  OfferMenus menus;
  menus.detected = make_scene("", "", request_labels).detected_labels;

  const auto start = Clock::now();
  const auto deadline = start + cfg.branch_deadline;

  std::shared_future<Timed<std::vector<RepositoryOffer>>> repo_future;
  if (repo && !menus.detected.empty()) {
    repo_future = launch<std::vector<RepositoryOffer>>(
        [repo, labels = menus.detected, k = cfg.repository_k, min = cfg.repository_min_score] {
          std::map<std::string, double> best;
          for (const auto& label : labels) {
            const auto query = embed(label, repo->provider());
            for (const auto& hit : repo->query_similar(query, k, min)) {
              auto [it, inserted] = best.emplace(hit.id, hit.score);
              if (!inserted) it->second = std::max(it->second, hit.score);
            }
          }
          std::vector<RepositoryOffer> offers;
          for (const auto& [id, score] : best) {
            if (auto rec = repo->get(id)) offers.push_back({rec->label, id, score});
          }
          std::stable_sort(offers.begin(), offers.end(), [](const auto& a, const auto& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.label < b.label;
          });
          if (offers.size() > k) offers.resize(k);
          return offers;
        });
  }

  std::shared_future<Timed<std::string>> rec_future;
  if (recommender) {
    rec_future = launch<std::string>([recommender, prompt = build_designer_prompt(scene)] { return recommender(prompt); });
  }

  if (repo_future.valid()) {
    if (repo_future.wait_until(deadline) != std::future_status::ready) {
      menus.warnings.push_back("repository search missed the deadline");
      if (timings) timings->repo_search = seconds_since(start);
    } else {
      try {
        auto r = repo_future.get();
        menus.repository = std::move(r.value);
        if (timings) timings->repo_search = r.seconds;
      } catch (...) {
        menus.warnings.push_back("repository search failed: " + exception_message(std::current_exception()));
      }
    }
  }

  std::vector<ObjectSuggestion> suggestions;
  if (!rec_future.valid()) {
    menus.warnings.push_back("no recommender configured");
  } else if (rec_future.wait_until(deadline) != std::future_status::ready) {
    menus.warnings.push_back("recommender missed the deadline");
    if (timings) timings->recommend = seconds_since(start);
  } else {
    try {
      auto r = rec_future.get();
      if (timings) timings->recommend = r.seconds;
      auto parsed = parse_suggestions(r.value);
      menus.location = parsed.location;
      suggestions = std::move(parsed.suggestions);
      if (suggestions.empty()) menus.warnings.push_back("recommender reply held no suggestions");
    } catch (...) {
      menus.warnings.push_back("recommender failed: " + exception_message(std::current_exception()));
    }
  }

  std::vector<std::string> repo_labels;
  if (repo) {
    for (const auto& rec : repo->records()) repo_labels.push_back(rec.label);
  }
  menus.filter = filter_duplicates(suggestions, scene.value_or(SceneDescription{}), repo_labels);
  menus.recommended = menus.filter.kept;
  return menus;
}

std::optional<Selection> first_detected(const OfferMenus& menus) {
  if (!menus.detected.empty()) return Selection{MenuSource::Detected, 0};
  if (!menus.repository.empty()) return Selection{MenuSource::Repository, 0};
  if (!menus.recommended.empty()) return Selection{MenuSource::Recommended, 0};
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(Backends backends, std::shared_ptr<Repository> repository, PipelineConfig config)
    : backends_(std::move(backends)), repository_(std::move(repository)), config_(std::move(config)) {
  if (!repository_) throw std::invalid_argument("pipeline needs a repository");
  if (config_.simplify.target_vertices < kMinTargetVertices) {
    throw std::invalid_argument("simplify target must be at least 4 vertices");
  }
}

Session Pipeline::create_session(const std::string& language) const {
  if (!valid_language_tag(language)) throw std::invalid_argument("malformed language tag '" + language + "'");
  Session s;
  s.id = random_id("s_");
  s.language = language;
  s.state_history.push_back(SessionState::Welcome);
  return s;
}

void Pipeline::move(Session& session, Trigger trigger) const {
  const auto from = session.state;
  const auto to = transition(from, trigger);
  if (!to) throw IllegalTransition(from, to_string(trigger));
  session.state = *to;
  session.state_history.push_back(*to);
  if (observer_) observer_(session, from, *to);
}

void Pipeline::fail(Session& session, SessionError error) const {
  session.error = std::move(error);
  session.asset.reset();
  if (!session.tasks.empty() && !session.tasks.back().finished) {
    auto& task = session.tasks.back();
    task.finished = true;
    task.success = false;
    task.error_code = session.error->code;
    task.timings = session.timings;
  }
  move(session, Trigger::BackendError);
}

namespace {

void begin_task(Session& s, TaskPath path) {
  s.menus.reset();
  s.selection.reset();
  s.asset.reset();
  s.utterances.clear();
  s.transcript.reset();
  s.image.reset();
  s.lasso.reset();
  s.detections.clear();
  s.timings = {};
  s.task_started = Clock::now();
  s.request_ended = s.menus_ready = {};
  TaskRecord task;
  task.path = path;
  s.tasks.push_back(std::move(task));
}

std::size_t resolve_label(const Session& s, MenuSource source, const std::string& wanted) {
  const auto key = normalize_label(wanted);
  const auto& m = *s.menus;
  auto find = [&](std::size_t n, auto label_of) -> std::size_t {
    for (std::size_t i = 0; i < n; ++i) {
      if (normalize_label(label_of(i)) == key) return i;
    }
    throw std::invalid_argument("no " + std::string(to_string(source)) + " entry labelled '" + wanted + "'");
  };
  switch (source) {
    case MenuSource::Detected: return find(m.detected.size(), [&](std::size_t i) { return m.detected[i]; });
    case MenuSource::Repository: return find(m.repository.size(), [&](std::size_t i) { return m.repository[i].label; });
    case MenuSource::Recommended:
      return find(m.recommended.size(), [&](std::size_t i) { return m.recommended[i].name; });
  }
  return 0;
}

std::size_t menu_size(const OfferMenus& m, MenuSource source) {
  switch (source) {
    case MenuSource::Detected: return m.detected.size();
    case MenuSource::Repository: return m.repository.size();
    case MenuSource::Recommended: return m.recommended.size();
  }
  return 0;
}

}  // namespace

void Pipeline::handle(Session& session, const ApiEvent& event) const {
  if (!accepts(session.state, event.type)) throw IllegalTransition(session.state, to_string(event.type));

  switch (event.type) {
    case EventType::Wake:
      begin_task(session, TaskPath::Speech);
      move(session, Trigger::Wake);
      return;

    case EventType::Transcript:
      if (event.text.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw std::invalid_argument("transcript is empty");
      }
      session.utterances.push_back(event.text);
      return;

    case EventType::Stop:
      if (session.utterances.empty()) throw std::invalid_argument("nothing was said before stop");
      session.request_ended = Clock::now();
      move(session, Trigger::Stop);
      run_thinking(session);
      return;

    case EventType::Capture:
    case EventType::Lasso:
      if (!event.image) throw std::invalid_argument("capture needs an image");
      if (event.lasso) require_valid_polygon(*event.lasso);
      begin_task(session, TaskPath::Image);
      session.image = event.image;
      session.lasso = event.lasso;
      session.request_ended = session.task_started;
      move(session, Trigger::Capture);
      run_observing(session);
      return;

    case EventType::Selection: {
      if (!event.selection) throw std::invalid_argument("selection event needs a selection");
      Selection sel = *event.selection;
      if (!session.menus) throw std::logic_error("menus missing in a selection state");
      if (event.selection_label) sel.index = resolve_label(session, sel.source, *event.selection_label);
      if (sel.index >= menu_size(*session.menus, sel.source)) {
        throw std::invalid_argument(std::string("selection index out of range for ") + to_string(sel.source));
      }
      session.selection = sel;
      session.timings.wait_for_selection = seconds_since(session.menus_ready);
      move(session, Trigger::Selection);
      run_baking(session);
      return;
    }
  }
}

void Pipeline::run_thinking(Session& session) const {
  try {
    std::string joined;
    for (const auto& u : session.utterances) {
      if (!joined.empty()) joined += ' ';
      joined += u;
    }
    auto t0 = Clock::now();
    session.transcript = backends_.speech->transcribe(joined, session.language);
    session.timings.transcribe = seconds_since(t0);

    t0 = Clock::now();
    const auto labels = backends_.llm->extract_objects(session.transcript->text);
    session.timings.extract = seconds_since(t0);

    std::optional<SceneDescription> scene;
    if (!labels.empty()) scene = make_scene("", session.transcript->text, labels);
    auto llm = backends_.llm;
    auto menus = assemble_offers(
        labels, scene, repository_, [llm](const std::string& prompt) { return llm->complete(prompt); }, config_,
        &session.timings);

    std::vector<std::string> names;
    for (const auto& s : menus.recommended) names.push_back(s.name);
    menus.novelty = novelty_score(session.history, names);
    session.history.push_back(names);
    auto& task = current_task(session);
    task.recommended = names;
    task.offer_filter = menus.filter;
    session.menus = std::move(menus);
  } catch (...) {
    fail(session, error_from_exception(std::current_exception()));
    return;
  }
  session.menus_ready = Clock::now();
  session.timings.responsiveness = seconds_between(session.request_ended, session.menus_ready);
  move(session, Trigger::MenusReady);
}

void Pipeline::run_observing(Session& session) const {
  try {
    auto t0 = Clock::now();
    const auto raw = backends_.detector->detect(*session.image, config_.detection_threshold);
    session.detections = filter_detections(raw, session.lasso, config_.detection_threshold);
    session.timings.extract = seconds_since(t0);

    std::vector<std::string> labels;
    for (const auto& d : session.detections) labels.push_back(d.label);
    std::optional<SceneDescription> scene;
    if (!labels.empty()) scene = make_scene("", "", labels);
    auto vlm = backends_.vlm;
    auto image = *session.image;
    auto menus = assemble_offers(
        labels, scene, repository_,
        [vlm, image](const std::string& prompt) { return vlm->describe(image, prompt); }, config_,
        &session.timings);

    std::vector<std::string> names;
    for (const auto& s : menus.recommended) names.push_back(s.name);
    menus.novelty = novelty_score(session.history, names);
    session.history.push_back(names);
    auto& task = current_task(session);
    task.recommended = names;
    task.offer_filter = menus.filter;
    session.menus = std::move(menus);
  } catch (...) {
    fail(session, error_from_exception(std::current_exception()));
    return;
  }
  session.menus_ready = Clock::now();
  session.timings.responsiveness = seconds_between(session.request_ended, session.menus_ready);
  move(session, Trigger::VlmReply);
}

void Pipeline::run_baking(Session& session) const {
  AssetRecord record;
  try {
    record = fulfill(session);
  } catch (...) {
    fail(session, error_from_exception(std::current_exception()));
    return;
  }
  session.asset = record.id;
  session.timings.task_completion = seconds_since(session.task_started);
  auto& task = current_task(session);
  task.finished = true;
  task.success = true;
  task.asset_id = record.id;
  task.timings = session.timings;
  move(session, Trigger::AssetReady);
}

AssetRecord Pipeline::fulfill(Session& session) const {
  if (session.state != SessionState::Baking) {
    throw std::logic_error(std::string("fulfill needs Baking, session is in ") + to_string(session.state));
  }
  if (!session.selection || !session.menus) throw std::logic_error("fulfill needs a selection");
  auto& task = current_task(session);
  const auto& menus = *session.menus;
  const auto sel = *session.selection;
  auto& t = session.timings;

  auto serve_cached = [&](const std::string& id) {
    const auto t0 = Clock::now();
    const auto rec = repository_->get(id);
    if (!rec) throw RepositoryError(RepositoryError::Code::NotFound, "asset " + id + " is not in the repository");
    const Mesh mesh = repository_->get_mesh(rec->mesh_ref);
    if (config_.retrieval_latency.count() > 0) std::this_thread::sleep_for(config_.retrieval_latency);
    auto updated = repository_->record_hit(id);
    t.retrieve = seconds_since(t0);
    t.time_to_object = t.retrieve;
    task.cache_hit = true;
    task.label = rec->label;
    task.served_vertices = mesh.vertices.size();
    task.served_bytes = compact_binary_size(mesh.vertices.size(), mesh.faces.size());
    return updated;
  };

  auto post_process = [&](Mesh raw, const std::string& label, AssetSource source, double generate_seconds) {
    t.generate = generate_seconds;
    task.label = label;
    require_valid(raw);
    task.raw_vertices = raw.vertices.size();
    task.raw_bytes = compact_binary_size(raw.vertices.size(), raw.faces.size());

    auto t0 = Clock::now();
    Mesh served;
    if (raw.vertices.size() > config_.simplify.target_vertices) {
      auto result = simplify(raw, config_.simplify);
      task.guard_blocked = result.report.guard_blocked;
      served = std::move(result.mesh);
    } else {
      served = std::move(raw);
    }
    t.simplify = seconds_since(t0);
    t.time_to_object = t.generate + t.simplify;

    t0 = Clock::now();
    auto rec = repository_->add_asset(label, served, source);
    t.deliver = seconds_since(t0);
    task.served_vertices = served.vertices.size();
    task.served_bytes = compact_binary_size(served.vertices.size(), served.faces.size());
    return rec;
  };

  auto generate_text = [&](const std::string& label, const std::string& prompt) {
    if (auto dup = repository_->find_duplicate(label)) return serve_cached(*dup);
    task.generator_invoked = true;
    const auto t0 = Clock::now();
    Mesh raw = backends_.text_to_3d->generate(prompt);
    return post_process(std::move(raw), label, AssetSource::Generated, seconds_since(t0));
  };

  switch (sel.source) {
    case MenuSource::Repository:
      return serve_cached(menus.repository.at(sel.index).asset_id);

    case MenuSource::Recommended: {
      const auto& s = menus.recommended.at(sel.index);
      std::string prompt = s.name;
      if (!s.color.empty() || !s.shape.empty()) prompt = s.color + " " + s.shape + " " + s.name;
      return generate_text(s.name, prompt);
    }

    case MenuSource::Detected: {
      const auto& label = menus.detected.at(sel.index);
      if (task.path == TaskPath::Speech || !session.image) return generate_text(label, label);
      const auto key = normalize_label(label);
      const auto it = std::find_if(session.detections.begin(), session.detections.end(),
                                   [&](const DetectionBox& d) { return normalize_label(d.label) == key; });
      if (it == session.detections.end()) throw std::logic_error("detected label without a detection box");
      const auto& size = session.image->size;
      Rect crop{std::clamp(it->box.x0, 0.0, double(size.width)), std::clamp(it->box.y0, 0.0, double(size.height)),
                std::clamp(it->box.x1, 0.0, double(size.width)), std::clamp(it->box.y1, 0.0, double(size.height))};
      if (crop.area() <= 0.0) throw GeometryError("detection box lies outside the image");
      task.generator_invoked = true;
      const auto t0 = Clock::now();
      Mesh raw = backends_.image_to_3d->generate(*session.image, crop);
      return post_process(std::move(raw), label, AssetSource::ImageDerived, seconds_since(t0));
    }
  }
  throw std::logic_error("unknown selection source");
}

// ---------------------------------------------------------------------------
// Report

namespace {

nlohmann::json summary(std::vector<double> xs) {
  if (xs.empty()) return {{"n", 0}, {"mean", nullptr}, {"median", nullptr}, {"min", nullptr}, {"max", nullptr}};
  std::sort(xs.begin(), xs.end());
  double sum = 0.0;
  for (double x : xs) sum += x;
  const std::size_t n = xs.size();
  const double median = n % 2 ? xs[n / 2] : (xs[n / 2 - 1] + xs[n / 2]) / 2;
  return {{"n", n}, {"mean", sum / double(n)}, {"median", median}, {"min", xs.front()}, {"max", xs.back()}};
}

nlohmann::json ratio(std::size_t num, std::size_t den) {
  return den == 0 ? nlohmann::json(nullptr) : nlohmann::json(double(num) / double(den));
}

}  // namespace

nlohmann::json report_metrics(std::span<const Session> sessions) {
  std::size_t started = 0, finished = 0, succeeded = 0, failed = 0, hits = 0, generated = 0;
  std::vector<double> completion, system_time, responsiveness, ttoh, ttog, raw_bytes, served_bytes, size_ratio;
  std::map<std::string, std::vector<double>> stages;
  std::map<std::string, std::size_t> error_codes;
  std::vector<std::vector<std::string>> recommended_sets;
  std::vector<FilterResult> filters;

  for (const auto& s : sessions) {
    for (const auto& task : s.tasks) {
      ++started;
      if (!task.recommended.empty() || !task.offer_filter.dropped.empty()) {
        recommended_sets.push_back(task.recommended);
        filters.push_back(task.offer_filter);
      }
      if (!task.finished) continue;
      ++finished;
      if (!task.success) {
        ++failed;
        if (task.error_code) ++error_codes[*task.error_code];
        continue;
      }
      ++succeeded;
      const auto& t = task.timings;
      completion.push_back(t.task_completion);
      system_time.push_back(std::max(0.0, t.task_completion - t.wait_for_selection));
      responsiveness.push_back(t.responsiveness);
      served_bytes.push_back(double(task.served_bytes));
      if (task.cache_hit) {
        ++hits;
        ttoh.push_back(t.time_to_object);
      } else {
        ++generated;
        ttog.push_back(t.time_to_object);
        raw_bytes.push_back(double(task.raw_bytes));
        if (task.served_bytes > 0) size_ratio.push_back(double(task.raw_bytes) / double(task.served_bytes));
      }
      for (auto [name, v] : {std::pair{"transcribe", t.transcribe}, {"extract", t.extract}, {"recommend", t.recommend},
                             {"repo_search", t.repo_search}, {"retrieve", t.retrieve}, {"generate", t.generate},
                             {"simplify", t.simplify}, {"deliver", t.deliver}}) {
        stages[name].push_back(v);
      }
    }
  }

  std::size_t generator_calls = 0;
  for (const auto& s : sessions) {
    for (const auto& task : s.tasks) generator_calls += task.generator_invoked ? 1 : 0;
  }

  nlohmann::json rows = nlohmann::json::array();
  auto completion_row = summary(completion);
  completion_row["metric"] = "task completion time";
  completion_row["unit"] = "s";
  completion_row["system_time"] = summary(system_time);
  rows.push_back(completion_row);
  rows.push_back({{"metric", "success rate"}, {"value", ratio(succeeded, finished)}, {"n", finished}});
  rows.push_back({{"metric", "error rate"}, {"value", ratio(failed, finished)}, {"n", finished}});
  auto resp_row = summary(responsiveness);
  resp_row["metric"] = "responsiveness";
  resp_row["unit"] = "s";
  rows.push_back(resp_row);
  nlohmann::json size_row{{"metric", "mesh file size"}, {"unit", "bytes"}};
  size_row["before"] = summary(raw_bytes);
  size_row["after"] = summary(served_bytes);
  size_row["ratio"] = summary(size_ratio);
  rows.push_back(size_row);

  nlohmann::json stage_json = nlohmann::json::object();
  for (const auto& [name, xs] : stages) stage_json[name] = summary(xs);

  nlohmann::json report{{"schema", kReportSchema},
                        {"sessions", sessions.size()},
                        {"tasks", {{"started", started}, {"finished", finished}, {"succeeded", succeeded},
                                   {"failed", failed}}},
                        {"rows", rows},
                        {"cache", {{"hits", hits}, {"misses", generated}, {"hit_rate", ratio(hits, hits + generated)},
                                   {"generator_invocations", generator_calls}}},
                        {"time_to_object", {{"cache_hit", summary(ttoh)}, {"generated", summary(ttog)}}},
                        {"stages", stage_json},
                        {"errors", error_codes}};
  if (!recommended_sets.empty()) {
    report["recommendation"] = recommendation_metrics(recommended_sets, filters).to_json();
  } else {
    report["recommendation"] = nullptr;
  }
  return report;
}

}  // namespace mforge
