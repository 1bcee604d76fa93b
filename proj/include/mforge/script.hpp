// script.hpp - headless replay of scripted sessions.
//
// A script is JSON, either one session or several:
//
//   {"language": "en", "events": [{"type": "wake"}, ...], "expect": "Presenting"}
//   {"sessions": [{...}, {...}]}
//
// Events use the gateway event shape. "expect" defaults to "Presenting".
#pragma once

#include <vector>

#include "json.hpp"
#include "mforge/pipeline.hpp"

namespace mforge {

struct ScriptOptions {
  /// Whenever a session waits in Offers or Suggestions and the script has no
  /// selection next, pick first_detected(menus).
  bool auto_select_first_detected = false;
};

struct ScriptResult {
  std::vector<Session> sessions;
  nlohmann::json summary;  // per-session outcome plus the metrics report
  bool ok = false;         // expected states reached, served assets valid, no rejected events
};

/// Throws std::invalid_argument for a malformed script.
ScriptResult run_script(const Pipeline& pipeline, const nlohmann::json& script, const ScriptOptions& options = {});

}  // namespace mforge
