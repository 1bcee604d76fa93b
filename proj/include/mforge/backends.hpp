// backends.hpp - model service interfaces, their JSON-over-HTTP clients and
// deterministic in-process mocks.
//
// Every backend kind speaks JSON over HTTP POST. Images travel as base64 in
// "image_b64"; meshes travel as base64 compact-binary in "mesh_b64". Request
// and response shapes per kind:
//
//   text-to-3d     {"prompt", "parameters"}                 -> {"mesh_b64"}
//   image-to-3d    {"image_b64", "crop": [x0,y0,x1,y1], "parameters"} -> {"mesh_b64"}
//   detector       {"image_b64", "threshold"}               -> {"detections": [{"label","confidence","box"}]}
//   stt-translate  {"audio", "language", "target_language"} -> {"text", "source_language"}
//   llm-extract    {"transcript"}                           -> {"objects": [..]}
//                  {"prompt"}                               -> {"text"}
//   vlm-describe   {"image_b64", "prompt"}                  -> {"text"}
//   tts            {"text", "language"}                     -> {"audio"}
//   text-embed     {"text"}                                 -> {"embedding": [..]}
//
// A non-2xx status with body {"error": {"code", "message"}} is a remote error.
#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mforge/image_geometry.hpp"
#include "mforge/mesh.hpp"

namespace mforge {

using json = nlohmann::json;
using Millis = std::chrono::milliseconds;

enum class BackendKind { TextTo3D, ImageTo3D, Detector, SttTranslate, LlmExtract, VlmDescribe, Tts, TextEmbed };

const char* to_string(BackendKind kind);
std::optional<BackendKind> parse_backend_kind(std::string_view name);

struct BackendDescriptor {
  BackendKind kind = BackendKind::TextTo3D;
  std::string endpoint;  // http://host:port/path
  Millis timeout{30000};
  json parameters = json::object();  // forwarded opaquely

  /// Shap-E style sampler settings used for text-to-3d unless overridden.
  static json default_text_to_3d_parameters();
  static BackendDescriptor from_json(const json& j);
  json to_json() const;
};

class BackendError : public std::runtime_error {
 public:
  enum class Code { Timeout, Unreachable, Malformed, Remote };

  BackendError(Code code, const std::string& what, int status = 0)
      : std::runtime_error(what), code_(code), status_(status) {}

  Code code() const { return code_; }
  int status() const { return status_; }
  /// Timeouts, connection failures and 5xx responses are worth retrying.
  bool retriable() const;

 private:
  Code code_;
  int status_;
};

const char* to_string(BackendError::Code code);

/// Runs `fn` on a worker thread and waits at most `timeout`. On expiry throws
/// BackendError(Timeout); the worker is detached and its result discarded.
json run_with_deadline(std::function<json()> fn, Millis timeout);

/// POSTs `request` to the descriptor endpoint. One retry on a retriable
/// failure; both attempts together never exceed descriptor.timeout.
json call_backend(const BackendDescriptor& descriptor, const json& request);

struct ImagePayload {
  std::string bytes;  // encoded image, opaque to the pipeline
  ImageSize size;
};

struct Transcript {
  std::string text;             // English
  std::string source_language;  // BCP-47
};

// Interfaces. Implementations must be safe to call concurrently.

class TextTo3DBackend {
 public:
  virtual ~TextTo3DBackend() = default;
  virtual Mesh generate(const std::string& prompt) = 0;
};

class ImageTo3DBackend {
 public:
  virtual ~ImageTo3DBackend() = default;
  virtual Mesh generate(const ImagePayload& image, const Rect& crop) = 0;
};

class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  virtual std::vector<DetectionBox> detect(const ImagePayload& image, double threshold) = 0;
};

class SpeechBackend {
 public:
  virtual ~SpeechBackend() = default;
  /// Transcribes and translates to English; English input passes through.
  virtual Transcript transcribe(const std::string& audio, const std::string& language) = 0;
};

class LanguageModelBackend {
 public:
  virtual ~LanguageModelBackend() = default;
  virtual std::vector<std::string> extract_objects(const std::string& transcript) = 0;
  virtual std::string complete(const std::string& prompt) = 0;
};

class VisionLanguageBackend {
 public:
  virtual ~VisionLanguageBackend() = default;
  virtual std::string describe(const ImagePayload& image, const std::string& prompt) = 0;
};

class SpeechSynthesisBackend {
 public:
  virtual ~SpeechSynthesisBackend() = default;
  virtual std::string speak(const std::string& text, const std::string& language) = 0;
};

/// The full set of services a pipeline needs.
struct Backends {
  std::shared_ptr<TextTo3DBackend> text_to_3d;
  std::shared_ptr<ImageTo3DBackend> image_to_3d;
  std::shared_ptr<DetectorBackend> detector;
  std::shared_ptr<SpeechBackend> speech;
  std::shared_ptr<LanguageModelBackend> llm;
  std::shared_ptr<VisionLanguageBackend> vlm;
  std::shared_ptr<SpeechSynthesisBackend> tts;
};

// ---------------------------------------------------------------------------
// Mocks

/// Fixture manifests read by the mocks. Loaded from a directory holding
/// detections.json, transcripts.json, llm.json and vlm.json.
struct MockFixtures {
  json detections = json::object();   // {"default": [...], "images": {"<sha256>": [...]}}
  json transcripts = json::object();  // {"<audio>": {"language": "fa", "text": "..."}}
  json llm = json::object();          // {"vocabulary": [...], "suggestions": {"default": "...", "<keyword>": "..."}}
  json vlm = json::object();          // {"default": "...", "<keyword>": "..."}

  static MockFixtures load(const std::filesystem::path& dir);
  /// Fixture directory from MFORGE_FIXTURES, falling back to the source tree.
  static std::filesystem::path default_dir();
};

/// Counts calls and optionally sleeps or fails; shared by the mock generators.
struct MockBehaviour {
  Millis latency{0};
  bool fail = false;
  std::optional<BackendError::Code> failure_code;
};

/// Closed icosphere whose subdivision level (3..6, i.e. 642..40962 vertices)
/// and radial bumps are keyed off the label hash.
Mesh procedural_mesh(std::string_view key);

class MockTextTo3D final : public TextTo3DBackend {
 public:
  explicit MockTextTo3D(MockBehaviour behaviour = {}) : behaviour_(behaviour) {}
  /// Replaces the procedural generator, e.g. to emit a fixed mesh.
  explicit MockTextTo3D(std::function<Mesh(const std::string&)> generator, MockBehaviour behaviour = {})
      : behaviour_(behaviour), generator_(std::move(generator)) {}

  Mesh generate(const std::string& prompt) override;
  std::size_t calls() const { return calls_.load(); }
  void set_behaviour(MockBehaviour b);

 private:
  mutable std::mutex mu_;
  MockBehaviour behaviour_;
  std::function<Mesh(const std::string&)> generator_;
  std::atomic<std::size_t> calls_{0};
};

class MockImageTo3D final : public ImageTo3DBackend {
 public:
  explicit MockImageTo3D(MockBehaviour behaviour = {}) : behaviour_(behaviour) {}
  Mesh generate(const ImagePayload& image, const Rect& crop) override;
  std::size_t calls() const { return calls_.load(); }

 private:
  MockBehaviour behaviour_;
  std::atomic<std::size_t> calls_{0};
};

class MockDetector final : public DetectorBackend {
 public:
  explicit MockDetector(json manifest) : manifest_(std::move(manifest)) {}
  std::vector<DetectionBox> detect(const ImagePayload& image, double threshold) override;

 private:
  json manifest_;
};

class MockSpeech final : public SpeechBackend {
 public:
  explicit MockSpeech(json manifest) : manifest_(std::move(manifest)) {}
  Transcript transcribe(const std::string& audio, const std::string& language) override;

 private:
  json manifest_;
};

class MockLanguageModel final : public LanguageModelBackend {
 public:
  explicit MockLanguageModel(json manifest, MockBehaviour behaviour = {})
      : manifest_(std::move(manifest)), behaviour_(behaviour) {}
  std::vector<std::string> extract_objects(const std::string& transcript) override;
  std::string complete(const std::string& prompt) override;

 private:
  json manifest_;
  MockBehaviour behaviour_;
};

class MockVisionLanguage final : public VisionLanguageBackend {
 public:
  explicit MockVisionLanguage(json manifest, MockBehaviour behaviour = {})
      : manifest_(std::move(manifest)), behaviour_(behaviour) {}
  std::string describe(const ImagePayload& image, const std::string& prompt) override;

 private:
  json manifest_;
  MockBehaviour behaviour_;
};

class MockSpeechSynthesis final : public SpeechSynthesisBackend {
 public:
  std::string speak(const std::string& text, const std::string& language) override;
};

struct MockBackendSet {
  Backends backends;
  std::shared_ptr<MockTextTo3D> text_to_3d;
  std::shared_ptr<MockImageTo3D> image_to_3d;
};

MockBackendSet make_mock_backends(const MockFixtures& fixtures, MockBehaviour generator = {});

// ---------------------------------------------------------------------------
// HTTP clients

class HttpTextTo3D final : public TextTo3DBackend {
 public:
  explicit HttpTextTo3D(BackendDescriptor d) : d_(std::move(d)) {}
  Mesh generate(const std::string& prompt) override;

 private:
  BackendDescriptor d_;
};

class HttpImageTo3D final : public ImageTo3DBackend {
 public:
  explicit HttpImageTo3D(BackendDescriptor d) : d_(std::move(d)) {}
  Mesh generate(const ImagePayload& image, const Rect& crop) override;

 private:
  BackendDescriptor d_;
};

class HttpDetector final : public DetectorBackend {
 public:
  explicit HttpDetector(BackendDescriptor d) : d_(std::move(d)) {}
  std::vector<DetectionBox> detect(const ImagePayload& image, double threshold) override;

 private:
  BackendDescriptor d_;
};

class HttpSpeech final : public SpeechBackend {
 public:
  explicit HttpSpeech(BackendDescriptor d) : d_(std::move(d)) {}
  Transcript transcribe(const std::string& audio, const std::string& language) override;

 private:
  BackendDescriptor d_;
};

class HttpLanguageModel final : public LanguageModelBackend {
 public:
  explicit HttpLanguageModel(BackendDescriptor d) : d_(std::move(d)) {}
  std::vector<std::string> extract_objects(const std::string& transcript) override;
  std::string complete(const std::string& prompt) override;

 private:
  BackendDescriptor d_;
};

class HttpVisionLanguage final : public VisionLanguageBackend {
 public:
  explicit HttpVisionLanguage(BackendDescriptor d) : d_(std::move(d)) {}
  std::string describe(const ImagePayload& image, const std::string& prompt) override;

 private:
  BackendDescriptor d_;
};

class HttpSpeechSynthesis final : public SpeechSynthesisBackend {
 public:
  explicit HttpSpeechSynthesis(BackendDescriptor d) : d_(std::move(d)) {}
  std::string speak(const std::string& text, const std::string& language) override;

 private:
  BackendDescriptor d_;
};

/// Uses an HTTP client for every kind that has a descriptor, mocks otherwise.
Backends make_backends(const std::vector<BackendDescriptor>& descriptors, const MockFixtures& fixtures);

// JSON helpers for the wire types.
json to_json(const DetectionBox& d);
DetectionBox detection_from_json(const json& j);
json to_json(const Rect& r);
Rect rect_from_json(const json& j);
json to_json(const LassoPolygon& p);
LassoPolygon lasso_from_json(const json& j);

/// Decodes a "mesh_b64" response field.
Mesh mesh_from_response(const json& response);

}  // namespace mforge
