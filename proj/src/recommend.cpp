#include "mforge/recommend.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "mforge/repository.hpp"  // normalize_label

namespace mforge {

namespace {

constexpr std::string_view kWhitespace = " \t\r\f\v";
constexpr std::string_view kSeparators = ",;|";

std::string_view trim(std::string_view s, std::string_view chars = kWhitespace) {
  const auto b = s.find_first_not_of(chars);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(chars) - b + 1);
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) {
    s.replace(pos, from.size(), to);
  }
}

// Drops markdown emphasis and maps en and em dashes onto the ASCII separator.
std::string clean_line(std::string_view raw) {
  std::string s(raw);
  replace_all(s, "**", "");
  replace_all(s, "\xE2\x80\x93", " - ");
  replace_all(s, "\xE2\x80\x94", " - ");
  return std::string(trim(s));
}

// Strips one leading bullet or list number. Returns true when one was found.
bool strip_list_marker(std::string_view& s) {
  auto followed_by_space = [&](std::size_t n) {
    return s.size() == n || s[n] == ' ' || s[n] == '\t';
  };
  for (std::string_view bullet : {"-", "*", "+", "\xE2\x80\xA2"}) {
    if (s.substr(0, bullet.size()) == bullet && followed_by_space(bullet.size())) {
      s = trim(s.substr(bullet.size()));
      return true;
    }
  }
  std::size_t i = s.empty() || s[0] != '(' ? 0 : 1;
  const std::size_t digits_start = i;
  while (i < s.size() && i - digits_start < 3 && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i == digits_start || i >= s.size()) return false;
  const bool paren = digits_start == 1;
  if (paren ? s[i] != ')' : (s[i] != '.' && s[i] != ')')) return false;
  if (!followed_by_space(i + 1)) return false;
  s = trim(s.substr(i + 1));
  return true;
}

enum class Key { Name, Color, Shape, Location };

struct KeyHit {
  Key key;
  std::size_t key_start;    // first char of the key word
  std::size_t value_start;  // just past the ':'
  std::size_t boundary;     // where the previous value ends
};

// Finds "key:" markers that start the line or follow a separator.
std::vector<KeyHit> find_keys(std::string_view line) {
  static const std::array<std::pair<std::string_view, Key>, 5> kKeys = {{
      {"name", Key::Name}, {"color", Key::Color}, {"colour", Key::Color},
      {"shape", Key::Shape}, {"location", Key::Location},
  }};
  const std::string l = lower_ascii(line);
  std::vector<KeyHit> hits;
  for (std::size_t i = 0; i < l.size(); ++i) {
    std::size_t boundary = i;
    if (i > 0) {
      std::size_t p = i;
      while (p > 0 && (l[p - 1] == ' ' || l[p - 1] == '\t')) --p;
      if (p == 0 || kSeparators.find(l[p - 1]) == std::string_view::npos) continue;
      boundary = p - 1;
    }
    for (const auto& [word, key] : kKeys) {
      if (l.compare(i, word.size(), word) != 0) continue;
      std::size_t j = i + word.size();
      while (j < l.size() && (l[j] == ' ' || l[j] == '\t')) ++j;
      if (j < l.size() && l[j] == ':') {
        hits.push_back({key, i, j + 1, boundary});
        break;
      }
    }
  }
  return hits;
}

std::string value_between(std::string_view line, std::size_t from, std::size_t to) {
  auto v = trim(line.substr(from, to - from));
  while (!v.empty() && kSeparators.find(v.back()) != std::string_view::npos) v = trim(v.substr(0, v.size() - 1));
  return std::string(v);
}

// Reads a double-quoted value starting at `from`; a backslash escapes the next
// byte. Returns the decoded text and the index past the closing quote.
std::optional<std::pair<std::string, std::size_t>> read_quoted(std::string_view line, std::size_t from) {
  if (from >= line.size() || line[from] != '"') return std::nullopt;
  std::string out;
  for (std::size_t i = from + 1; i < line.size(); ++i) {
    if (line[i] == '\\' && i + 1 < line.size()) {
      out.push_back(line[++i]);
    } else if (line[i] == '"') {
      return std::pair{std::move(out), i + 1};
    } else {
      out.push_back(line[i]);
    }
  }
  return std::nullopt;
}

std::string quote(std::string_view value) {
  std::string out = "\"";
  for (char c : value) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::optional<ObjectSuggestion> parse_labeled(std::string_view line, const std::vector<KeyHit>& keys) {
  ObjectSuggestion s;
  std::set<Key> seen;
  std::size_t k = 0;
  while (k < keys.size()) {
    const auto& key = keys[k];
    std::string value;
    std::size_t next = k + 1;
    // A quoted value ends at its closing quote; key markers inside it are text.
    const auto vs = line.find_first_not_of(kWhitespace, key.value_start);
    const auto quoted = vs == std::string_view::npos ? std::nullopt : read_quoted(line, vs);
    std::size_t after = quoted ? line.find_first_not_of(kWhitespace, quoted->second) : 0;
    if (quoted && (after == std::string_view::npos || kSeparators.find(line[after]) != std::string_view::npos)) {
      value = quoted->first;
      while (next < keys.size() && keys[next].key_start < quoted->second) ++next;
    } else {
      const std::size_t end = next < keys.size() ? keys[next].boundary : line.size();
      value = value_between(line, key.value_start, end);
    }
    if (seen.insert(key.key).second) {  // first occurrence wins
      switch (key.key) {
        case Key::Name: s.name = std::move(value); break;
        case Key::Color: s.color = std::move(value); break;
        case Key::Shape: s.shape = std::move(value); break;
        case Key::Location: s.location = std::move(value); break;
      }
    }
    k = next;
  }
  if (s.name.empty()) return std::nullopt;
  return s;
}

std::vector<std::string_view> split(std::string_view s, std::string_view sep) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  for (std::size_t next; (next = s.find(sep, pos)) != std::string_view::npos; pos = next + sep.size()) {
    parts.push_back(s.substr(pos, next - pos));
  }
  parts.push_back(s.substr(pos));
  return parts;
}

std::optional<ObjectSuggestion> parse_dashed(std::string_view line) {
  const auto first = line.find(" - ");
  if (first == std::string_view::npos) return std::nullopt;
  ObjectSuggestion s;
  s.name = std::string(trim(line.substr(0, first)));
  auto rest = line.substr(first + 3);
  const auto second = rest.find(" - ");
  std::string_view middle = rest;
  if (second != std::string_view::npos) {
    middle = rest.substr(0, second);
    s.location = std::string(trim(rest.substr(second + 3)));
  }
  const auto comma = middle.find(',');
  if (comma == std::string_view::npos) {
    s.color = std::string(trim(middle));
  } else {
    s.color = std::string(trim(middle.substr(0, comma)));
    s.shape = std::string(trim(middle.substr(comma + 1)));
  }
  return s;
}

std::optional<ObjectSuggestion> parse_comma(std::string_view line) {
  const auto parts = split(line, ",");
  if (parts.size() < 4) return std::nullopt;
  ObjectSuggestion s{std::string(trim(parts[0])), std::string(trim(parts[1])), std::string(trim(parts[2])), {}};
  const auto third = parts[0].size() + parts[1].size() + parts[2].size() + 3;
  s.location = std::string(trim(line.substr(third)));
  return s;
}

bool complete(const ObjectSuggestion& s) {
  return !s.name.empty() && !s.color.empty() && !s.shape.empty() && !s.location.empty();
}

bool has_detail(const ObjectSuggestion& s) {
  return !s.name.empty() && (!s.color.empty() || !s.shape.empty() || !s.location.empty());
}

enum class LineKind { Blank, Header, ObjectSuggestion, Other };

struct LineResult {
  LineKind kind = LineKind::Other;
  std::optional<ObjectSuggestion> suggestion;
  SceneLocation location;
};

LineResult classify(std::string_view raw) {
  LineResult r;
  const std::string cleaned = clean_line(raw);
  std::string_view line = cleaned;
  if (line.empty()) {
    r.kind = LineKind::Blank;
    return r;
  }
  const bool marked = strip_list_marker(line);
  const auto keys = find_keys(line);
  if (!keys.empty() && keys.front().key_start == 0) {
    const bool has_name = std::any_of(keys.begin(), keys.end(), [](const KeyHit& k) { return k.key == Key::Name; });
    if (!has_name && keys.front().key == Key::Location) {
      const auto value = trim(line.substr(keys.front().value_start));
      const auto quoted = read_quoted(value, 0);
      const auto rest = quoted ? trim(value.substr(quoted->second)) : std::string_view{};
      if (quoted && (rest.empty() || rest.front() == '-')) {
        r.location.name = quoted->first;
        if (!rest.empty()) r.location.description = std::string(trim(rest.substr(1)));
      } else {
        const auto dash = value.find(" - ");
        r.location.name = std::string(trim(value.substr(0, dash)));
        if (dash != std::string_view::npos) r.location.description = std::string(trim(value.substr(dash + 3)));
      }
      if (!r.location.name.empty()) r.kind = LineKind::Header;
      return r;
    }
    r.suggestion = parse_labeled(line, keys);
  } else if (line.find(" - ") != std::string_view::npos) {
    r.suggestion = parse_dashed(line);
    if (r.suggestion && !(marked ? has_detail(*r.suggestion) : complete(*r.suggestion))) r.suggestion.reset();
  } else if (marked) {
    r.suggestion = parse_comma(line);
    if (r.suggestion && !has_detail(*r.suggestion)) r.suggestion.reset();
  }
  if (r.suggestion) r.kind = LineKind::ObjectSuggestion;
  return r;
}

std::string missing_fields(const ObjectSuggestion& s) {
  std::string out;
  auto note = [&](const std::string& v, const char* name) {
    if (!v.empty()) return;
    if (!out.empty()) out += ", ";
    out += name;
  };
  note(s.color, "color");
  note(s.shape, "shape");
  note(s.location, "location");
  return out;
}

std::string dashed_form(const ObjectSuggestion& s) {
  std::string out = s.name + " - ";
  if (!s.shape.empty()) {
    out += s.color + ", " + s.shape;
  } else {
    out += s.color;
  }
  if (!s.location.empty()) out += " - " + s.location;
  return out;
}

std::string labeled_form(const ObjectSuggestion& s, bool quoted) {
  auto v = [quoted](const std::string& x) { return quoted ? quote(x) : x; };
  return "Name: " + v(s.name) + "; Color: " + v(s.color) + "; Shape: " + v(s.shape) + "; Location: " + v(s.location);
}

}  // namespace

const std::string_view kLocationClause =
    "write where am I (location name and a short description of the location).";
const std::string_view kDesignerClause =
    "As a designer, recommend 5 simple objects (name , color, shape and suggest a location for each object within "
    "this space relative to the other objects in the picture) that would be suitable for this place but are "
    "currently not present.";

std::string build_designer_prompt(const std::optional<SceneDescription>& scene) {
  std::string prompt = std::string(kLocationClause) + "\n" + std::string(kDesignerClause);
  if (scene && !scene->detected_labels.empty()) {
    prompt += "\nObjects already detected in the picture: ";
    for (std::size_t i = 0; i < scene->detected_labels.size(); ++i) {
      if (i) prompt += ", ";
      prompt += scene->detected_labels[i];
    }
    prompt += ".";
  }
  return prompt;
}

std::optional<ObjectSuggestion> parse_suggestion_line(std::string_view line) {
  auto r = classify(line);
  if (r.kind != LineKind::ObjectSuggestion) return std::nullopt;
  return r.suggestion;
}

ParsedSuggestions parse_suggestions(std::string_view text) {
  ParsedSuggestions out;
  if (trim(text, " \t\r\f\v\n").empty()) {
    out.issues.push_back({1, std::string(text), "empty input"});
    return out;
  }
  const auto lines = split(text, "\n");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto r = classify(lines[i]);
    switch (r.kind) {
      case LineKind::Blank: break;
      case LineKind::Header:
        if (out.location) {
          out.issues.push_back({i + 1, std::string(lines[i]), "repeated location header ignored"});
        } else {
          out.location = r.location;
        }
        break;
      case LineKind::ObjectSuggestion: {
        const auto missing = missing_fields(*r.suggestion);
        if (!missing.empty()) out.issues.push_back({i + 1, std::string(lines[i]), "missing " + missing});
        out.suggestions.push_back(*r.suggestion);
        break;
      }
      case LineKind::Other: out.issues.push_back({i + 1, std::string(lines[i]), "not a suggestion"}); break;
    }
  }
  return out;
}

std::string format_suggestion(const ObjectSuggestion& s) {
  // The dashed form reads best. Labeled fields come next, and quoting every
  // value always reads back exactly. A candidate must survive both as a bare
  // line and behind a list marker.
  for (auto candidate : {dashed_form(s), labeled_form(s, false)}) {
    if (parse_suggestion_line(candidate) == s && parse_suggestion_line("1. " + candidate) == s) return candidate;
  }
  return labeled_form(s, true);
}

std::string format_suggestions(const ParsedSuggestions& parsed) {
  std::string out;
  if (parsed.location) {
    const auto& loc = *parsed.location;
    const std::string tail = loc.description.empty() ? "" : " - " + loc.description;
    std::string header = "Location: " + loc.name + tail;
    const auto back = classify(header);
    if (back.kind != LineKind::Header || back.location != loc) header = "Location: " + quote(loc.name) + tail;
    out += header + "\n";
  }
  for (std::size_t i = 0; i < parsed.suggestions.size(); ++i) {
    out += std::to_string(i + 1) + ". " + format_suggestion(parsed.suggestions[i]) + "\n";
  }
  return out;
}

SceneDescription make_scene(std::string location_name, std::string summary, const std::vector<std::string>& labels) {
  SceneDescription scene{std::move(location_name), std::move(summary), {}};
  std::set<std::string> seen;
  for (const auto& label : labels) {
    const auto key = normalize_label(label);
    if (!key.empty() && seen.insert(key).second) scene.detected_labels.push_back(std::string(trim(label)));
  }
  return scene;
}

FilterResult filter_duplicates(const std::vector<ObjectSuggestion>& suggestions, const SceneDescription& scene,
                               const std::vector<std::string>& repo_labels) {
  std::set<std::string> present, cached;
  for (const auto& label : scene.detected_labels) present.insert(normalize_label(label));
  for (const auto& label : repo_labels) cached.insert(normalize_label(label));
  FilterResult out;
  for (const auto& s : suggestions) {
    const auto key = normalize_label(s.name);
    if (present.count(key)) {
      out.dropped.push_back(s);
    } else {
      out.kept.push_back(s);
      out.cache_available.push_back(cached.count(key) > 0);
    }
  }
  return out;
}

DiversityIndex diversity_index(std::span<const std::string> labels) {
  if (labels.empty()) throw std::invalid_argument("diversity of an empty label set is undefined");
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[normalize_label(l)];
  DiversityIndex d;
  d.total = labels.size();
  d.distinct = counts.size();
  const double n = static_cast<double>(d.total);
  double h = 0.0;
  for (const auto& [label, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  d.entropy_bits = h;
  d.normalized = d.distinct > 1 ? h / std::log2(static_cast<double>(d.distinct)) : 0.0;
  return d;
}

double novelty_score(const std::vector<std::vector<std::string>>& history, const std::vector<std::string>& current) {
  if (current.empty()) return 0.0;
  std::set<std::string> seen;
  for (const auto& set : history) {
    for (const auto& label : set) seen.insert(normalize_label(label));
  }
  const auto fresh = std::count_if(current.begin(), current.end(),
                                   [&](const std::string& label) { return !seen.count(normalize_label(label)); });
  return static_cast<double>(fresh) / static_cast<double>(current.size());
}

double duplicate_rate(std::span<const FilterResult> results) {
  std::size_t suggested = 0, dropped = 0;
  for (const auto& r : results) {
    suggested += r.kept.size() + r.dropped.size();
    dropped += r.dropped.size();
  }
  return suggested ? static_cast<double>(dropped) / static_cast<double>(suggested) : 0.0;
}

nlohmann::json RecommendationMetrics::to_json() const {
  return {{"diversity_index", diversity_index}, {"novelty_score", novelty_score}, {"duplicate_rate", duplicate_rate}};
}

RecommendationMetrics recommendation_metrics(const std::vector<std::vector<std::string>>& recommended_sets,
                                             std::span<const FilterResult> filtered) {
  RecommendationMetrics m;
  std::vector<std::string> all;
  double novelty_sum = 0.0;
  std::size_t novelty_count = 0;
  for (std::size_t i = 0; i < recommended_sets.size(); ++i) {
    all.insert(all.end(), recommended_sets[i].begin(), recommended_sets[i].end());
    if (recommended_sets[i].empty()) continue;
    const std::vector<std::vector<std::string>> before(recommended_sets.begin(),
                                                       recommended_sets.begin() + static_cast<std::ptrdiff_t>(i));
    novelty_sum += novelty_score(before, recommended_sets[i]);
    ++novelty_count;
  }
  if (!all.empty()) m.diversity_index = diversity_index(all).normalized;
  if (novelty_count) m.novelty_score = novelty_sum / static_cast<double>(novelty_count);
  m.duplicate_rate = duplicate_rate(filtered);
  return m;
}

}  // namespace mforge
