#include "mforge/script.hpp"

namespace mforge {

using nlohmann::json;

namespace {

struct ScriptedSession {
  std::string language = "en";
  std::vector<ApiEvent> events;
  SessionState expect = SessionState::Presenting;
};

std::vector<ScriptedSession> parse_script(const json& script) {
  if (!script.is_object()) throw std::invalid_argument("script must be a JSON object");
  std::vector<json> raw;
  if (script.contains("sessions")) {
    if (!script["sessions"].is_array() || script["sessions"].empty()) {
      throw std::invalid_argument("'sessions' must be a non-empty array");
    }
    for (const auto& s : script["sessions"]) raw.push_back(s);
  } else {
    raw.push_back(script);
  }

  std::vector<ScriptedSession> out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& s = raw[i];
    const std::string where = "session " + std::to_string(i);
    if (!s.is_object()) throw std::invalid_argument(where + ": must be an object");
    ScriptedSession ss;
    if (s.contains("language")) ss.language = s["language"].get<std::string>();
    if (s.contains("expect")) {
      const auto st = parse_session_state(s["expect"].get<std::string>());
      if (!st) throw std::invalid_argument(where + ": unknown expected state");
      ss.expect = *st;
    }
    if (!s.contains("events") || !s["events"].is_array()) throw std::invalid_argument(where + ": needs 'events'");
    for (std::size_t k = 0; k < s["events"].size(); ++k) {
      try {
        ss.events.push_back(ApiEvent::from_json(s["events"][k]));
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(where + ", event " + std::to_string(k) + ": " + e.what());
      }
    }
    out.push_back(std::move(ss));
  }
  return out;
}

bool waiting_for_selection(SessionState s) { return s == SessionState::Offers || s == SessionState::Suggestions; }

}  // namespace

ScriptResult run_script(const Pipeline& pipeline, const json& script, const ScriptOptions& options) {
  const auto scripted = parse_script(script);
  ScriptResult result;
  result.ok = true;
  json outcomes = json::array();

  for (const auto& ss : scripted) {
    Session s = pipeline.create_session(ss.language);
    json rejected = json::array();

    auto auto_select = [&](std::size_t next) {
      if (!options.auto_select_first_detected || !waiting_for_selection(s.state)) return;
      if (next < ss.events.size() && ss.events[next].type == EventType::Selection) return;
      const auto sel = first_detected(*s.menus);
      if (!sel) return;
      ApiEvent pick;
      pick.type = EventType::Selection;
      pick.selection = *sel;
      pipeline.handle(s, pick);
    };

    for (std::size_t k = 0; k < ss.events.size(); ++k) {
      try {
        pipeline.handle(s, ss.events[k]);
        auto_select(k + 1);
      } catch (const std::exception& e) {
        rejected.push_back({{"event", k}, {"message", e.what()}});
      }
    }

    json outcome{{"id", s.id},
                 {"language", s.language},
                 {"final_state", to_string(s.state)},
                 {"expected_state", to_string(ss.expect)},
                 {"rejected", rejected}};
    json states = json::array();
    for (auto st : s.state_history) states.push_back(to_string(st));
    outcome["states"] = states;
    bool ok = s.state == ss.expect && rejected.empty();

    if (s.asset) {
      outcome["asset"] = *s.asset;
      const auto rec = pipeline.repository().get(*s.asset);
      if (rec) {
        const Mesh mesh = pipeline.repository().get_mesh(rec->mesh_ref);
        const bool valid = validate(mesh).ok();
        const bool guard = !s.tasks.empty() && s.tasks.back().guard_blocked;
        const bool budget = mesh.vertices.size() <= pipeline.config().simplify.target_vertices || guard;
        outcome["served"] = {{"label", rec->label},
                             {"vertices", mesh.vertices.size()},
                             {"faces", mesh.faces.size()},
                             {"valid", valid},
                             {"within_budget", budget},
                             {"guard_blocked", guard}};
        ok = ok && valid && budget;
      } else {
        ok = false;
      }
    } else {
      outcome["asset"] = nullptr;
    }
    if (s.error) outcome["error"] = {{"code", s.error->code}, {"message", s.error->message}};
    outcome["ok"] = ok;
    result.ok = result.ok && ok;
    outcomes.push_back(std::move(outcome));
    result.sessions.push_back(std::move(s));
  }

  result.summary = {{"ok", result.ok}, {"sessions", outcomes}, {"report", report_metrics(result.sessions)}};
  return result;
}

}  // namespace mforge
