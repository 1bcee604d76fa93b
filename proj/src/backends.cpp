#include "mforge/backends.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <thread>

#include "httplib.h"
#include "mforge/encoding.hpp"
#include "mforge/mesh_io.hpp"
#include "mforge/primitives.hpp"

#ifndef MFORGE_SOURCE_FIXTURES_DIR
#define MFORGE_SOURCE_FIXTURES_DIR "fixtures"
#endif

namespace mforge {

namespace {

constexpr std::pair<BackendKind, const char*> kKindNames[] = {
    {BackendKind::TextTo3D, "text-to-3d"},     {BackendKind::ImageTo3D, "image-to-3d"},
    {BackendKind::Detector, "detector"},       {BackendKind::SttTranslate, "stt-translate"},
    {BackendKind::LlmExtract, "llm-extract"},  {BackendKind::VlmDescribe, "vlm-describe"},
    {BackendKind::Tts, "tts"},                 {BackendKind::TextEmbed, "text-embed"},
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string hex64(std::uint64_t v) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[i] = kHex[v & 0xf];
  return out;
}

void apply(const MockBehaviour& b) {
  if (b.latency.count() > 0) std::this_thread::sleep_for(b.latency);
  if (b.fail) {
    throw BackendError(b.failure_code.value_or(BackendError::Code::Remote), "mock backend failure", 503);
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return json::object();
  return json::parse(in);
}

struct Endpoint {
  std::string base;  // scheme://host:port
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw BackendError(BackendError::Code::Unreachable, "bad endpoint URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

json post_once(const BackendDescriptor& d, const std::string& body, Millis budget) {
  const auto ep = split_endpoint(d.endpoint);
  httplib::Client client(ep.base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(budget);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(budget - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(ep.path, body, "application/json");
  if (!res) {
    const auto elapsed = std::chrono::steady_clock::now() - start;
    const bool timed_out = res.error() == httplib::Error::ConnectionTimeout || elapsed >= budget;
    throw BackendError(timed_out ? BackendError::Code::Timeout : BackendError::Code::Unreachable,
                       std::string(to_string(d.kind)) + " backend: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    std::string message = "HTTP " + std::to_string(res->status);
    auto parsed = json::parse(res->body, nullptr, false);
    if (!parsed.is_discarded() && parsed.contains("error") && parsed["error"].is_object()) {
      message += ": " + parsed["error"].value("message", std::string{});
    }
    throw BackendError(BackendError::Code::Remote, std::string(to_string(d.kind)) + " backend: " + message,
                       res->status);
  }
  auto parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    throw BackendError(BackendError::Code::Malformed, std::string(to_string(d.kind)) + " backend: response is not a JSON object");
  }
  return parsed;
}

template <typename T>
T field(const json& response, const char* name, BackendKind kind) {
  try {
    return response.at(name).get<T>();
  } catch (const json::exception& e) {
    throw BackendError(BackendError::Code::Malformed,
                       std::string(to_string(kind)) + " backend: bad field '" + name + "': " + e.what());
  }
}

bool contains_word(const std::string& haystack, const std::string& needle, std::size_t& at) {
  std::size_t pos = 0;
  while ((pos = haystack.find(needle, pos)) != std::string::npos) {
    const bool left = pos == 0 || !std::isalnum(static_cast<unsigned char>(haystack[pos - 1]));
    const std::size_t end = pos + needle.size();
    const bool right = end >= haystack.size() || !std::isalnum(static_cast<unsigned char>(haystack[end]));
    if (left && right) {
      at = pos;
      return true;
    }
    ++pos;
  }
  return false;
}

}  // namespace

const char* to_string(BackendKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<BackendKind> parse_backend_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (name == n) return k;
  }
  return std::nullopt;
}

const char* to_string(BackendError::Code code) {
  switch (code) {
    case BackendError::Code::Timeout: return "timeout";
    case BackendError::Code::Unreachable: return "unreachable";
    case BackendError::Code::Malformed: return "malformed-response";
    case BackendError::Code::Remote: return "remote-error";
  }
  return "unknown";
}

bool BackendError::retriable() const {
  switch (code_) {
    case Code::Timeout:
    case Code::Unreachable: return true;
    case Code::Remote: return status_ >= 500 || status_ == 429;
    case Code::Malformed: return false;
  }
  return false;
}

json BackendDescriptor::default_text_to_3d_parameters() {
  return {{"sampling_steps", 64}, {"sigma_min", 1e-3}, {"sigma_max", 160}, {"s_churn", 0}};
}

BackendDescriptor BackendDescriptor::from_json(const json& j) {
  BackendDescriptor d;
  const auto kind = parse_backend_kind(j.at("kind").get<std::string>());
  if (!kind) throw std::invalid_argument("unknown backend kind: " + j.at("kind").get<std::string>());
  d.kind = *kind;
  d.endpoint = j.at("endpoint").get<std::string>();
  d.timeout = Millis(j.value("timeout_ms", 30000));
  if (d.kind == BackendKind::TextTo3D) d.parameters = default_text_to_3d_parameters();
  if (j.contains("parameters")) d.parameters.update(j["parameters"]);
  return d;
}

json BackendDescriptor::to_json() const {
  return {{"kind", to_string(kind)}, {"endpoint", endpoint}, {"timeout_ms", timeout.count()}, {"parameters", parameters}};
}

json run_with_deadline(std::function<json()> fn, Millis timeout) {
  auto promise = std::make_shared<std::promise<json>>();
  auto future = promise->get_future();
  std::thread([promise, fn = std::move(fn)] {
    try {
      promise->set_value(fn());
    } catch (...) {
      promise->set_exception(std::current_exception());
    }
  }).detach();
  if (future.wait_for(timeout) != std::future_status::ready) {
    throw BackendError(BackendError::Code::Timeout,
                       "backend call exceeded its " + std::to_string(timeout.count()) + " ms deadline");
  }
  return future.get();
}

json call_backend(const BackendDescriptor& descriptor, const json& request) {
  const std::string body = request.dump();
  const auto deadline = std::chrono::steady_clock::now() + descriptor.timeout;
  return run_with_deadline(
      [descriptor, body, deadline]() -> json {
        for (int attempt = 0;; ++attempt) {
          const auto remaining = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
          if (remaining.count() <= 0) {
            throw BackendError(BackendError::Code::Timeout, std::string(to_string(descriptor.kind)) + " backend: deadline");
          }
          try {
            return post_once(descriptor, body, remaining);
          } catch (const BackendError& e) {
            if (attempt >= 1 || !e.retriable()) throw;
          }
        }
      },
      descriptor.timeout);
}

// ---------------------------------------------------------------------------
// JSON helpers

json to_json(const Rect& r) { return json::array({r.x0, r.y0, r.x1, r.y1}); }

Rect rect_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("rectangle must be [x0, y0, x1, y1]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json to_json(const DetectionBox& d) {
  return {{"label", d.label}, {"confidence", d.confidence}, {"box", to_json(d.box)}};
}

DetectionBox detection_from_json(const json& j) {
  DetectionBox d{j.at("label").get<std::string>(), j.at("confidence").get<double>(), rect_from_json(j.at("box"))};
  if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) throw std::invalid_argument("confidence out of [0, 1]");
  if (!(d.box.x1 > d.box.x0 && d.box.y1 > d.box.y0)) throw std::invalid_argument("degenerate detection box");
  return d;
}

json to_json(const LassoPolygon& p) {
  json points = json::array();
  for (const auto& pt : p.points) points.push_back(json::array({pt.x, pt.y}));
  return points;
}

LassoPolygon lasso_from_json(const json& j) {
  LassoPolygon p;
  for (const auto& pt : j) {
    if (pt.is_array() && pt.size() == 2) {
      p.points.push_back({pt[0].get<double>(), pt[1].get<double>()});
    } else {
      p.points.push_back({pt.at("x").get<double>(), pt.at("y").get<double>()});
    }
  }
  return p;
}

Mesh mesh_from_response(const json& response) {
  std::string bytes;
  try {
    bytes = base64_decode(response.at("mesh_b64").get<std::string>());
  } catch (const std::exception& e) {
    throw BackendError(BackendError::Code::Malformed, std::string("mesh payload: ") + e.what());
  }
  try {
    return read_mesh(bytes, MeshFormat::CompactBinary);
  } catch (const FormatError& e) {
    throw BackendError(BackendError::Code::Malformed, std::string("mesh payload: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Mocks

MockFixtures MockFixtures::load(const std::filesystem::path& dir) {
  MockFixtures f;
  f.detections = read_json_file(dir / "detections.json");
  f.transcripts = read_json_file(dir / "transcripts.json");
  f.llm = read_json_file(dir / "llm.json");
  f.vlm = read_json_file(dir / "vlm.json");
  return f;
}

std::filesystem::path MockFixtures::default_dir() {
  if (const char* env = std::getenv("MFORGE_FIXTURES"); env && *env) return env;
  return MFORGE_SOURCE_FIXTURES_DIR;
}

Mesh procedural_mesh(std::string_view key) {
  const std::uint64_t h = fnv1a64(key);
  Mesh m = make_icosphere(3 + static_cast<int>(h % 4));
  auto unit = [h](int k) { return static_cast<double>((h >> (8 * k)) & 0xff) / 255.0; };
  const double a1 = 0.04 + 0.10 * unit(1), a2 = 0.03 + 0.08 * unit(2);
  const double f1 = 1.0 + 3.0 * unit(3), f2 = 1.0 + 3.0 * unit(4), f3 = 1.0 + 2.0 * unit(5);
  const double p1 = 6.283 * unit(6), p2 = 6.283 * unit(7);
  const double scale = 0.1 + 0.4 * unit(0);  // object radius in meters
  displace_radially(m, [&](double x, double y, double z) {
    return scale * (1.0 + a1 * std::sin(f1 * x + p1) * std::cos(f2 * y) + a2 * std::sin(f3 * z + p2));
  });
  return m;
}

void MockTextTo3D::set_behaviour(MockBehaviour b) {
  std::lock_guard lock(mu_);
  behaviour_ = b;
}

Mesh MockTextTo3D::generate(const std::string& prompt) {
  ++calls_;
  MockBehaviour b;
  {
    std::lock_guard lock(mu_);
    b = behaviour_;
  }
  apply(b);
  return generator_ ? generator_(prompt) : procedural_mesh(prompt);
}

Mesh MockImageTo3D::generate(const ImagePayload& image, const Rect& crop) {
  ++calls_;
  apply(behaviour_);
  return procedural_mesh(image.bytes + "|" + to_json(crop).dump());
}

std::vector<DetectionBox> MockDetector::detect(const ImagePayload& image, double threshold) {
  const json* set = nullptr;
  const auto digest = sha256_hex(image.bytes);
  if (manifest_.contains("images") && manifest_["images"].contains(digest)) {
    set = &manifest_["images"][digest];
  } else if (manifest_.contains("default")) {
    set = &manifest_["default"];
  }
  std::vector<DetectionBox> out;
  if (!set) return out;
  for (const auto& j : *set) {
    auto d = detection_from_json(j);
    if (d.confidence >= threshold) out.push_back(std::move(d));
  }
  return out;
}

Transcript MockSpeech::transcribe(const std::string& audio, const std::string& language) {
  const std::string lang = lower(language);
  if (lang == "en" || lang.rfind("en-", 0) == 0) return {audio, language};
  if (manifest_.contains(audio)) {
    const auto& entry = manifest_[audio];
    return {entry.at("text").get<std::string>(), entry.value("language", language)};
  }
  throw BackendError(BackendError::Code::Remote, "stt-translate mock: no fixture for audio '" + audio + "'", 404);
}

std::vector<std::string> MockLanguageModel::extract_objects(const std::string& transcript) {
  apply(behaviour_);
  const std::string text = lower(transcript);
  std::vector<std::string> vocab;
  if (manifest_.contains("vocabulary")) vocab = manifest_["vocabulary"].get<std::vector<std::string>>();
  // Longest entries first so "potted plant" wins over "plant".
  std::stable_sort(vocab.begin(), vocab.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });

  std::vector<std::pair<std::size_t, std::string>> found;
  std::vector<std::pair<std::size_t, std::size_t>> taken;
  for (const auto& word : vocab) {
    const std::string w = lower(word);
    std::size_t at = 0;
    if (!contains_word(text, w, at)) continue;
    const bool overlaps = std::any_of(taken.begin(), taken.end(), [&](const auto& span) {
      return at < span.second && span.first < at + w.size();
    });
    if (overlaps) continue;
    taken.emplace_back(at, at + w.size());
    found.emplace_back(at, w);
  }
  std::sort(found.begin(), found.end());
  std::vector<std::string> labels;
  for (auto& [pos, w] : found) labels.push_back(std::move(w));
  if (!labels.empty()) return labels;

  // Unknown object: strip a leading command phrase and articles.
  std::string rest = text;
  for (const char* prefix : {"please ", "create ", "make ", "generate ", "add ", "give me ", "i want ", "show me ",
                             "a ", "an ", "the ", "some "}) {
    if (rest.rfind(prefix, 0) == 0) rest = rest.substr(std::char_traits<char>::length(prefix));
  }
  while (!rest.empty() && !std::isalnum(static_cast<unsigned char>(rest.back()))) rest.pop_back();
  if (!rest.empty()) labels.push_back(rest);
  return labels;
}

std::string MockLanguageModel::complete(const std::string& prompt) {
  apply(behaviour_);
  if (!manifest_.contains("suggestions")) return {};
  const auto& s = manifest_["suggestions"];
  const std::string text = lower(prompt);
  for (const auto& [key, value] : s.items()) {
    std::size_t at = 0;
    if (key != "default" && contains_word(text, lower(key), at)) return value.get<std::string>();
  }
  return s.value("default", std::string{});
}

std::string MockVisionLanguage::describe(const ImagePayload& image, const std::string&) {
  apply(behaviour_);
  const auto digest = sha256_hex(image.bytes);
  if (manifest_.contains("images") && manifest_["images"].contains(digest)) {
    return manifest_["images"][digest].get<std::string>();
  }
  return manifest_.value("default", std::string{});
}

std::string MockSpeechSynthesis::speak(const std::string& text, const std::string& language) {
  return "tts:" + language + ":" + hex64(fnv1a64(text));
}

MockBackendSet make_mock_backends(const MockFixtures& fixtures, MockBehaviour generator) {
  MockBackendSet set;
  set.text_to_3d = std::make_shared<MockTextTo3D>(generator);
  set.image_to_3d = std::make_shared<MockImageTo3D>(generator);
  set.backends.text_to_3d = set.text_to_3d;
  set.backends.image_to_3d = set.image_to_3d;
  set.backends.detector = std::make_shared<MockDetector>(fixtures.detections);
  set.backends.speech = std::make_shared<MockSpeech>(fixtures.transcripts);
  set.backends.llm = std::make_shared<MockLanguageModel>(fixtures.llm);
  set.backends.vlm = std::make_shared<MockVisionLanguage>(fixtures.vlm);
  set.backends.tts = std::make_shared<MockSpeechSynthesis>();
  return set;
}

// ---------------------------------------------------------------------------
// HTTP clients

Mesh HttpTextTo3D::generate(const std::string& prompt) {
  return mesh_from_response(call_backend(d_, {{"prompt", prompt}, {"parameters", d_.parameters}}));
}

Mesh HttpImageTo3D::generate(const ImagePayload& image, const Rect& crop) {
  return mesh_from_response(call_backend(
      d_, {{"image_b64", base64_encode(image.bytes)}, {"crop", to_json(crop)}, {"parameters", d_.parameters}}));
}

std::vector<DetectionBox> HttpDetector::detect(const ImagePayload& image, double threshold) {
  const auto r = call_backend(d_, {{"image_b64", base64_encode(image.bytes)}, {"threshold", threshold}});
  std::vector<DetectionBox> out;
  try {
    for (const auto& j : r.at("detections")) out.push_back(detection_from_json(j));
  } catch (const std::exception& e) {
    throw BackendError(BackendError::Code::Malformed, std::string("detector backend: ") + e.what());
  }
  return out;
}

Transcript HttpSpeech::transcribe(const std::string& audio, const std::string& language) {
  const auto r = call_backend(d_, {{"audio", audio}, {"language", language}, {"target_language", "en"}});
  return {field<std::string>(r, "text", d_.kind), r.value("source_language", language)};
}

std::vector<std::string> HttpLanguageModel::extract_objects(const std::string& transcript) {
  return field<std::vector<std::string>>(call_backend(d_, {{"transcript", transcript}}), "objects", d_.kind);
}

std::string HttpLanguageModel::complete(const std::string& prompt) {
  return field<std::string>(call_backend(d_, {{"prompt", prompt}}), "text", d_.kind);
}

std::string HttpVisionLanguage::describe(const ImagePayload& image, const std::string& prompt) {
  return field<std::string>(
      call_backend(d_, {{"image_b64", base64_encode(image.bytes)}, {"prompt", prompt}}), "text", d_.kind);
}

std::string HttpSpeechSynthesis::speak(const std::string& text, const std::string& language) {
  return field<std::string>(call_backend(d_, {{"text", text}, {"language", language}}), "audio", d_.kind);
}

Backends make_backends(const std::vector<BackendDescriptor>& descriptors, const MockFixtures& fixtures) {
  Backends b = make_mock_backends(fixtures).backends;
  for (const auto& d : descriptors) {
    switch (d.kind) {
      case BackendKind::TextTo3D: b.text_to_3d = std::make_shared<HttpTextTo3D>(d); break;
      case BackendKind::ImageTo3D: b.image_to_3d = std::make_shared<HttpImageTo3D>(d); break;
      case BackendKind::Detector: b.detector = std::make_shared<HttpDetector>(d); break;
      case BackendKind::SttTranslate: b.speech = std::make_shared<HttpSpeech>(d); break;
      case BackendKind::LlmExtract: b.llm = std::make_shared<HttpLanguageModel>(d); break;
      case BackendKind::VlmDescribe: b.vlm = std::make_shared<HttpVisionLanguage>(d); break;
      case BackendKind::Tts: b.tts = std::make_shared<HttpSpeechSynthesis>(d); break;
      case BackendKind::TextEmbed: break;  // consumed by the repository
    }
  }
  return b;
}

}  // namespace mforge
