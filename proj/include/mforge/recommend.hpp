// recommend.hpp - designer prompts, suggestion parsing and recommendation
// metrics.
//
// Suggestion grammar, one per line, after an optional bullet ("-", "*", "+",
// "•") or number ("1.", "1)", "(1)"):
//
//   Name - Color, Shape - Location
//   Name: n, Color: c, Shape: s, Location: l      (keys in any order, ',' or ';')
//   Name, Color, Shape, Location                  (bare comma form)
//
// En and em dashes (U+2013, U+2014) are accepted in place of " - ", and markdown "**" is ignored.
// A line starting with "Location:" and no "Name:" key is the scene header:
//
//   Location: Office - A quiet workspace.
//
// A labeled value or header name may be double-quoted, with backslash
// escaping the next byte; the formatter quotes only when the plain forms would
// read back differently. Everything else is reported as a ParseIssue and
// parsing never throws.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mforge {

/// What is known about the user's surroundings.
struct SceneDescription {
  std::string location_name;
  std::string summary;
  std::vector<std::string> detected_labels;  // deduplicated case-insensitively
};

/// Builds a scene, keeping the first spelling of each label.
SceneDescription make_scene(std::string location_name, std::string summary, const std::vector<std::string>& labels);

/// The two instruction clauses, verbatim.
extern const std::string_view kLocationClause;
extern const std::string_view kDesignerClause;

/// The clauses joined by a newline. With a scene, the detected labels are
/// appended so the model avoids recommending them.
std::string build_designer_prompt(const std::optional<SceneDescription>& scene);

struct ObjectSuggestion {
  std::string name;
  std::string color;
  std::string shape;
  std::string location;
  bool operator==(const ObjectSuggestion&) const = default;
};

struct SceneLocation {
  std::string name;
  std::string description;
  bool operator==(const SceneLocation&) const = default;
};

struct ParseIssue {
  std::size_t line = 0;  // 1-based
  std::string text;
  std::string message;
};

struct ParsedSuggestions {
  std::optional<SceneLocation> location;
  std::vector<ObjectSuggestion> suggestions;
  std::vector<ParseIssue> issues;
};

/// Parses a single line; nullopt when it is not a suggestion.
std::optional<ObjectSuggestion> parse_suggestion_line(std::string_view line);
ParsedSuggestions parse_suggestions(std::string_view text);

/// "Name - Color, Shape - Location" when that reads back unchanged, labeled
/// (and if needed quoted) fields otherwise. Parses back alone or numbered.
std::string format_suggestion(const ObjectSuggestion& s);
/// Header (when present) followed by numbered lines; parses back to the same value.
std::string format_suggestions(const ParsedSuggestions& parsed);

struct FilterResult {
  std::vector<ObjectSuggestion> kept;
  std::vector<ObjectSuggestion> dropped;  // already present in the scene
  std::vector<bool> cache_available;      // per kept entry: a repository label matches
};

/// Drops suggestions whose name matches a detected scene label and flags kept
/// ones whose name matches a repository label. Matching is exact after
/// normalize_label (case-insensitive, trimmed, inner whitespace collapsed).
FilterResult filter_duplicates(const std::vector<ObjectSuggestion>& suggestions, const SceneDescription& scene,
                               const std::vector<std::string>& repo_labels);

struct DiversityIndex {
  double entropy_bits = 0.0;  // Shannon entropy, base 2
  double normalized = 0.0;    // entropy / log2(distinct), 0 for a single distinct label
  std::size_t distinct = 0;
  std::size_t total = 0;
};

/// Entropy of the label distribution after normalize_label.
/// Throws std::invalid_argument for an empty input.
DiversityIndex diversity_index(std::span<const std::string> labels);

/// Fraction of `current` labels absent from every earlier set in `history`.
/// An empty history gives 1; an empty current set gives 0.
double novelty_score(const std::vector<std::vector<std::string>>& history, const std::vector<std::string>& current);

/// Dropped over suggested across a series of filter results; 0 when nothing was suggested.
double duplicate_rate(std::span<const FilterResult> results);

struct RecommendationMetrics {
  double diversity_index = 0.0;  // normalized
  double novelty_score = 0.0;
  double duplicate_rate = 0.0;

  nlohmann::json to_json() const;
};

/// Aggregates one recommendation series: every set of recommended labels in
/// order (novelty of each against its predecessors, then averaged), and the
/// filter results for the duplicate rate. Diversity is taken over the union
/// multiset of all recommended labels; empty input gives zeros.
RecommendationMetrics recommendation_metrics(const std::vector<std::vector<std::string>>& recommended_sets,
                                             std::span<const FilterResult> filtered);

}  // namespace mforge
