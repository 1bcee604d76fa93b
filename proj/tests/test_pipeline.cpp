#include <doctest.h>

#include <atomic>
#include <chrono>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "mforge/mesh_io.hpp"
#include "mforge/pipeline.hpp"
#include "mforge/primitives.hpp"
#include "mforge/script.hpp"

using namespace mforge;
using namespace std::chrono_literals;
using S = SessionState;

namespace {

std::shared_ptr<Repository> memory_repo() {
  return std::make_shared<Repository>(RepositoryConfig{}, std::make_shared<HashingEmbeddingProvider>());
}

const MockFixtures& fixtures() {
  static const MockFixtures f = MockFixtures::load(MockFixtures::default_dir());
  return f;
}

ApiEvent ev(EventType type) {
  ApiEvent e;
  e.type = type;
  return e;
}

ApiEvent say(std::string text) {
  auto e = ev(EventType::Transcript);
  e.text = std::move(text);
  return e;
}

ApiEvent capture(std::string token) {
  auto e = ev(EventType::Capture);
  e.image = ImagePayload{std::move(token), {640, 480}};
  return e;
}

ApiEvent pick(MenuSource source, std::size_t index) {
  auto e = ev(EventType::Selection);
  e.selection = Selection{source, index};
  return e;
}

void speak_request(const Pipeline& p, Session& s, const std::string& text) {
  p.handle(s, ev(EventType::Wake));
  p.handle(s, say(text));
  p.handle(s, ev(EventType::Stop));
}

// Closed 13,944-vertex mesh, built once.
const Mesh& dense_mesh() {
  static const Mesh m = [] {
    SimplifyConfig cfg;
    cfg.target_vertices = 13944;
    return simplify(make_icosphere(6), cfg).mesh;
  }();
  return m;
}

}  // namespace

TEST_CASE("transition table: exactly the declared edges") {
  const std::map<std::pair<S, Trigger>, S> expected{
      {{S::Welcome, Trigger::Wake}, S::Listening},      {{S::Listening, Trigger::Stop}, S::Thinking},
      {{S::Thinking, Trigger::MenusReady}, S::Offers},  {{S::Offers, Trigger::Selection}, S::Baking},
      {{S::Baking, Trigger::AssetReady}, S::Presenting}, {{S::Welcome, Trigger::Capture}, S::Observing},
      {{S::Observing, Trigger::VlmReply}, S::Suggestions}, {{S::Suggestions, Trigger::Selection}, S::Baking},
      {{S::Presenting, Trigger::Wake}, S::Listening},
  };
  const S states[] = {S::Welcome, S::Listening, S::Thinking, S::Offers, S::Baking,
                      S::Presenting, S::Observing, S::Suggestions, S::Failed};
  const Trigger triggers[] = {Trigger::Wake, Trigger::Stop, Trigger::MenusReady, Trigger::Capture,
                              Trigger::VlmReply, Trigger::Selection, Trigger::AssetReady, Trigger::BackendError};
  for (auto s : states) {
    for (auto t : triggers) {
      CAPTURE(to_string(s));
      CAPTURE(to_string(t));
      std::optional<S> want;
      if (t == Trigger::BackendError) {
        if (s != S::Failed) want = S::Failed;
      } else if (auto it = expected.find({s, t}); it != expected.end()) {
        want = it->second;
      }
      CHECK(transition(s, t) == want);
    }
    CHECK(parse_session_state(to_string(s)) == s);
  }
  CHECK(is_declared_edge(S::Baking, S::Presenting));
  CHECK_FALSE(is_declared_edge(S::Offers, S::Presenting));
  CHECK_FALSE(is_declared_edge(S::Listening, S::Presenting));
}

TEST_CASE("advance rejects undeclared edges and leaves the state alone") {
  Session s;
  s.state = S::Listening;
  CHECK_THROWS_AS(advance(s, Trigger::AssetReady), IllegalTransition);
  CHECK(s.state == S::Listening);
  try {
    advance(s, Trigger::AssetReady);
  } catch (const IllegalTransition& e) {
    CHECK(e.from() == S::Listening);
    CHECK(e.event() == "asset-ready");
  }
  CHECK(advance(s, Trigger::Stop).state == S::Thinking);
  s.state = S::Failed;
  CHECK_THROWS_AS(advance(s, Trigger::BackendError), IllegalTransition);
}

TEST_CASE("speech path visits exactly the speech states and serves a bounded asset") {
  auto mocks = make_mock_backends(fixtures());
  Pipeline p(mocks.backends, memory_repo());
  Session s = p.create_session("en");
  CHECK(s.state == S::Welcome);
  CHECK_FALSE(s.menus.has_value());

  speak_request(p, s, "please create an apple");
  REQUIRE(s.state == S::Offers);
  REQUIRE(s.menus);
  CHECK(s.menus->detected == std::vector<std::string>{"apple"});
  CHECK(s.menus->repository.empty());
  REQUIRE(s.menus->recommended.size() == 5);
  CHECK(s.menus->recommended[0].name == "Pineapple");
  CHECK(s.menus->warnings.empty());
  CHECK(s.menus->novelty == 1.0);
  CHECK_FALSE(s.asset);

  p.handle(s, pick(MenuSource::Detected, 0));
  CHECK(s.state == S::Presenting);
  CHECK(s.state_history ==
        std::vector<S>{S::Welcome, S::Listening, S::Thinking, S::Offers, S::Baking, S::Presenting});
  REQUIRE(s.asset);
  const auto rec = p.repository().get(*s.asset);
  REQUIRE(rec);
  CHECK(rec->label == "apple");
  CHECK(rec->source == AssetSource::Generated);
  CHECK(p.repository().get_mesh(rec->mesh_ref).vertices.size() <= 1000);
  CHECK(mocks.text_to_3d->calls() == 1);

  const auto& task = s.tasks.back();
  CHECK(task.success);
  CHECK(task.generator_invoked);
  CHECK_FALSE(task.cache_hit);
  CHECK(task.served_vertices <= 1000);
  CHECK(task.timings.time_to_object == doctest::Approx(task.timings.generate + task.timings.simplify));
  CHECK(task.timings.task_completion >= task.timings.time_to_object);
}

TEST_CASE("translated speech is transcribed before extraction") {
  auto mocks = make_mock_backends(fixtures());
  Pipeline p(mocks.backends, memory_repo());
  Session s = p.create_session("fa");
  speak_request(p, s, "audio:fa:apple");
  REQUIRE(s.transcript);
  CHECK(s.transcript->text == "create an apple");
  CHECK(s.transcript->source_language == "fa");
  CHECK(s.menus->detected == std::vector<std::string>{"apple"});
}

TEST_CASE("image path visits exactly the image states") {
  auto mocks = make_mock_backends(fixtures());
  Pipeline p(mocks.backends, memory_repo());
  Session s = p.create_session();

  p.handle(s, capture("office-scene"));
  REQUIRE(s.state == S::Suggestions);
  REQUIRE(s.menus);
  CHECK(s.menus->detected == std::vector<std::string>{"chair", "monitor", "keyboard"});
  REQUIRE(s.menus->location);
  CHECK(s.menus->location->name == "Office");
  // The VLM offers a chair, which is already in the picture.
  REQUIRE(s.menus->filter.dropped.size() == 1);
  CHECK(s.menus->filter.dropped[0].name == "Chair");
  CHECK(s.menus->recommended.size() == 4);

  p.handle(s, pick(MenuSource::Detected, 1));
  CHECK(s.state == S::Presenting);
  CHECK(s.state_history == std::vector<S>{S::Welcome, S::Observing, S::Suggestions, S::Baking, S::Presenting});
  CHECK(mocks.image_to_3d->calls() == 1);
  CHECK(mocks.text_to_3d->calls() == 0);
  const auto rec = p.repository().get(*s.asset);
  REQUIRE(rec);
  CHECK(rec->label == "monitor");
  CHECK(rec->source == AssetSource::ImageDerived);
}

TEST_CASE("lasso narrows the detections") {
  auto mocks = make_mock_backends(fixtures());
  Pipeline p(mocks.backends, memory_repo());
  Session s = p.create_session();
  auto e = capture("office-scene");
  e.type = EventType::Lasso;
  e.lasso = LassoPolygon{{{280, 240}, {440, 240}, {440, 479}, {280, 479}}};  // around the chair
  p.handle(s, e);
  REQUIRE(s.state == S::Suggestions);
  CHECK(s.menus->detected == std::vector<std::string>{"chair"});
}

TEST_CASE("recommended selection on the image path goes through text-to-3D") {
  auto mocks = make_mock_backends(fixtures());
  Pipeline p(mocks.backends, memory_repo());
  Session s = p.create_session();
  p.handle(s, capture("office-scene"));
  p.handle(s, pick(MenuSource::Recommended, 0));
  REQUIRE(s.state == S::Presenting);
  CHECK(mocks.text_to_3d->calls() == 1);
  CHECK(p.repository().get(*s.asset)->label == "Potted Plant");
}

TEST_CASE("repeating a request is a cache hit with no generator call") {
  auto mocks = make_mock_backends(fixtures());
  Pipeline p(mocks.backends, memory_repo());
  Session a = p.create_session();
  speak_request(p, a, "create an apple");
  p.handle(a, pick(MenuSource::Detected, 0));
  REQUIRE(a.state == S::Presenting);
  REQUIRE(mocks.text_to_3d->calls() == 1);

  Session b = p.create_session();
  speak_request(p, b, "make an apple");
  // The stored apple now appears in the repository menu.
  REQUIRE_FALSE(b.menus->repository.empty());
  CHECK(b.menus->repository[0].label == "apple");
  CHECK(b.menus->repository[0].asset_id == *a.asset);
  CHECK(b.menus->repository[0].score == doctest::Approx(1.0));

  p.handle(b, pick(MenuSource::Detected, 0));
  REQUIRE(b.state == S::Presenting);
  CHECK(mocks.text_to_3d->calls() == 1);
  CHECK(*b.asset == *a.asset);
  CHECK(b.tasks.back().cache_hit);
  CHECK_FALSE(b.tasks.back().generator_invoked);
  CHECK(b.tasks.back().timings.time_to_object == b.tasks.back().timings.retrieve);
  CHECK(p.repository().get(*a.asset)->hit_count == 1);
}

TEST_CASE("repository selection never invokes a generator") {
  auto mocks = make_mock_backends(fixtures());
  auto repo = memory_repo();
  const auto seeded = repo->add_asset("banana", make_icosphere(2), AssetSource::Imported);
  Pipeline p(mocks.backends, repo);
  Session s = p.create_session();
  speak_request(p, s, "i want a banana");
  REQUIRE(s.menus->repository.size() == 1);
  p.handle(s, pick(MenuSource::Repository, 0));
  REQUIRE(s.state == S::Presenting);
  CHECK(*s.asset == seeded.id);
  CHECK(mocks.text_to_3d->calls() == 0);
  CHECK(mocks.image_to_3d->calls() == 0);
  CHECK(repo->get(seeded.id)->hit_count == 1);
}

TEST_CASE("a 13,944-vertex generation is served at the vertex budget") {
  const Mesh& dense = dense_mesh();
  REQUIRE(dense.vertices.size() == 13944);
  auto mocks = make_mock_backends(fixtures());
  mocks.backends.text_to_3d = std::make_shared<MockTextTo3D>([&](const std::string&) { return dense; });
  Pipeline p(mocks.backends, memory_repo());
  Session s = p.create_session();
  speak_request(p, s, "create an apple");
  p.handle(s, pick(MenuSource::Detected, 0));
  REQUIRE(s.state == S::Presenting);
  const auto& task = s.tasks.back();
  CHECK(task.raw_vertices == 13944);
  CHECK(task.served_vertices == 1000);
  const Mesh served = p.repository().get_mesh(p.repository().get(*s.asset)->mesh_ref);
  CHECK(served.vertices.size() == 1000);
  CHECK(served.faces.size() == 1996);
  CHECK(task.raw_bytes == compact_binary_size(13944, 27884));
  const double ratio = double(task.raw_bytes) / double(task.served_bytes);
  CHECK(ratio >= 10.0);
  CHECK(ratio <= 20.0);
}

TEST_CASE("offers degrade when a branch fails or misses the deadline") {
  SUBCASE("failing recommender") {
    auto mocks = make_mock_backends(fixtures());
    mocks.backends.llm = std::make_shared<MockLanguageModel>(fixtures().llm, MockBehaviour{0ms, true, {}});
    Pipeline p(mocks.backends, memory_repo());
    Session s = p.create_session();
    p.handle(s, ev(EventType::Wake));
    p.handle(s, say("create an apple"));
    // Extraction uses the same failing model, so the session fails outright.
    p.handle(s, ev(EventType::Stop));
    CHECK(s.state == S::Failed);
  }
  SUBCASE("failing VLM leaves the suggestions empty") {
    auto mocks = make_mock_backends(fixtures());
    mocks.backends.vlm = std::make_shared<MockVisionLanguage>(fixtures().vlm, MockBehaviour{0ms, true, {}});
    Pipeline p(mocks.backends, memory_repo());
    Session s = p.create_session();
    p.handle(s, capture("office-scene"));
    REQUIRE(s.state == S::Suggestions);
    CHECK(s.menus->recommended.empty());
    CHECK(s.menus->detected.size() == 3);
    REQUIRE(s.menus->warnings.size() == 1);
    CHECK(s.menus->warnings[0].find("recommender failed") == 0);
  }
  SUBCASE("slow VLM is cut at the branch deadline") {
    auto mocks = make_mock_backends(fixtures());
    mocks.backends.vlm = std::make_shared<MockVisionLanguage>(fixtures().vlm, MockBehaviour{1500ms, false, {}});
    PipelineConfig cfg;
    cfg.branch_deadline = 150ms;
    Pipeline p(mocks.backends, memory_repo(), cfg);
    Session s = p.create_session();
    const auto t0 = std::chrono::steady_clock::now();
    p.handle(s, capture("office-scene"));
    const auto elapsed = std::chrono::steady_clock::now() - t0;
    REQUIRE(s.state == S::Suggestions);
    CHECK(elapsed < 1000ms);
    CHECK(s.menus->recommended.empty());
    REQUIRE(s.menus->warnings.size() == 1);
    CHECK(s.menus->warnings[0] == "recommender missed the deadline");
  }
}

TEST_CASE("assemble_offers runs both branches concurrently") {
  auto repo = memory_repo();
  repo->add_asset("apple", make_icosphere(1), AssetSource::Imported);
  PipelineConfig cfg;
  const auto t0 = std::chrono::steady_clock::now();
  auto menus = assemble_offers(
      {"apple"}, make_scene("", "", {"apple"}), repo,
      [](const std::string& prompt) {
        std::this_thread::sleep_for(200ms);
        CHECK(prompt.find("apple") != std::string::npos);
        return std::string("1. Pear - Green, Teardrop - Beside the apple\n2. Apple - Red, Round - Table");
      },
      cfg);
  CHECK(std::chrono::steady_clock::now() - t0 < 1s);
  REQUIRE(menus.repository.size() == 1);
  CHECK(menus.repository[0].label == "apple");
  REQUIRE(menus.recommended.size() == 1);
  CHECK(menus.recommended[0].name == "Pear");
  REQUIRE(menus.filter.dropped.size() == 1);
  CHECK(menus.filter.dropped[0].name == "Apple");
}

TEST_CASE("generator failures move the session to Failed with a retriable flag") {
  auto mocks = make_mock_backends(fixtures(), MockBehaviour{0ms, true, BackendError::Code::Timeout});
  Pipeline p(mocks.backends, memory_repo());
  Session s = p.create_session();
  speak_request(p, s, "create an apple");
  p.handle(s, pick(MenuSource::Detected, 0));
  REQUIRE(s.state == S::Failed);
  REQUIRE(s.error);
  CHECK(s.error->code == "backend-timeout");
  CHECK(s.error->retriable);
  CHECK_FALSE(s.asset);
  CHECK(s.state_history.back() == S::Failed);
  CHECK(s.tasks.back().finished);
  CHECK_FALSE(s.tasks.back().success);
  CHECK(p.repository().size() == 0);
  // Failed is final.
  CHECK_THROWS_AS(p.handle(s, ev(EventType::Wake)), IllegalTransition);
}

TEST_CASE("an invalid generated mesh fails with a validation report") {
  auto mocks = make_mock_backends(fixtures());
  mocks.backends.text_to_3d = std::make_shared<MockTextTo3D>([](const std::string&) {
    Mesh m = make_tetrahedron();
    m.faces.push_back({0, 0, 1});
    return m;
  });
  Pipeline p(mocks.backends, memory_repo());
  Session s = p.create_session();
  speak_request(p, s, "create an apple");
  p.handle(s, pick(MenuSource::Detected, 0));
  REQUIRE(s.state == S::Failed);
  CHECK(s.error->code == "invalid-mesh");
  CHECK_FALSE(s.error->retriable);
  CHECK(s.error->details.contains("validation"));
  CHECK(p.repository().size() == 0);
}

TEST_CASE("illegal or malformed events leave the session unchanged") {
  auto mocks = make_mock_backends(fixtures());
  Pipeline p(mocks.backends, memory_repo());
  Session s = p.create_session();
  CHECK_THROWS_AS(p.handle(s, pick(MenuSource::Detected, 0)), IllegalTransition);
  CHECK_THROWS_AS(p.handle(s, ev(EventType::Stop)), IllegalTransition);
  CHECK(s.state == S::Welcome);

  p.handle(s, ev(EventType::Wake));
  CHECK_THROWS_AS(p.handle(s, ev(EventType::Stop)), std::invalid_argument);  // nothing said
  CHECK_THROWS_AS(p.handle(s, capture("office-scene")), IllegalTransition);
  CHECK(s.state == S::Listening);

  p.handle(s, say("create an apple"));
  p.handle(s, ev(EventType::Stop));
  REQUIRE(s.state == S::Offers);
  CHECK_THROWS_AS(p.handle(s, pick(MenuSource::Detected, 7)), std::invalid_argument);
  CHECK_THROWS_AS(p.handle(s, pick(MenuSource::Repository, 0)), std::invalid_argument);
  CHECK(s.state == S::Offers);
  CHECK(mocks.text_to_3d->calls() == 0);

  auto by_label = pick(MenuSource::Recommended, 0);
  by_label.selection_label = "grapes";
  p.handle(s, by_label);
  CHECK(s.state == S::Presenting);
  CHECK(s.selection->index == 1);
  CHECK(p.repository().get(*s.asset)->label == "Grapes");

  // A new request from Presenting resets the task inputs.
  p.handle(s, ev(EventType::Wake));
  CHECK(s.state == S::Listening);
  CHECK_FALSE(s.menus);
  CHECK_FALSE(s.asset);
  CHECK(s.tasks.size() == 2);
}

TEST_CASE("session language tags are validated") {
  auto mocks = make_mock_backends(fixtures());
  Pipeline p(mocks.backends, memory_repo());
  CHECK(p.create_session("en-US").language == "en-US");
  CHECK(p.create_session("fa").language == "fa");
  CHECK_THROWS_AS(p.create_session(""), std::invalid_argument);
  CHECK_THROWS_AS(p.create_session("english please"), std::invalid_argument);
  CHECK(p.create_session().id != p.create_session().id);
}

TEST_CASE("ApiEvent::from_json") {
  using nlohmann::json;
  auto t = ApiEvent::from_json({{"type", "transcript"}, {"text", "hello"}, {"event_id", "e1"}});
  CHECK(t.type == EventType::Transcript);
  CHECK(t.text == "hello");
  CHECK(t.event_id == "e1");

  auto c = ApiEvent::from_json({{"type", "capture"}, {"image_b64", "b2ZmaWNlLXNjZW5l"}, {"width", 800}});
  REQUIRE(c.image);
  CHECK(c.image->bytes == "office-scene");
  CHECK(c.image->size.width == 800);
  CHECK(c.image->size.height == 480);

  auto l = ApiEvent::from_json(
      {{"type", "lasso"}, {"image", "x"}, {"lasso", json::array({json::array({0, 0}), json::array({10, 0}),
                                                                json::array({10, 10})})}});
  REQUIRE(l.lasso);
  CHECK(l.lasso->points.size() == 3);

  auto sel = ApiEvent::from_json({{"type", "selection"}, {"source", "repository"}, {"index", 2}});
  CHECK(sel.selection->source == MenuSource::Repository);
  CHECK(sel.selection->index == 2);
  auto by_label = ApiEvent::from_json({{"type", "selection"}, {"source", "recommended"}, {"label", "Vase"}});
  CHECK(by_label.selection_label == "Vase");

  for (const json& bad : {json(42), json{{"type", "dance"}}, json{{"type", "transcript"}},
                          json{{"type", "transcript"}, {"text", "  "}}, json{{"type", "capture"}},
                          json{{"type", "lasso"}, {"image", "x"}},
                          json{{"type", "lasso"}, {"image", "x"}, {"lasso", json::array({json::array({0, 0})})}},
                          json{{"type", "selection"}, {"source", "fridge"}, {"index", 0}},
                          json{{"type", "selection"}, {"source", "detected"}, {"index", -1}},
                          json{{"type", "selection"}, {"source", "detected"}},
                          json{{"type", "wake"}, {"event_id", 5}}}) {
    CAPTURE(bad.dump());
    CHECK_THROWS_AS(ApiEvent::from_json(bad), std::invalid_argument);
  }
}

TEST_CASE("random walks: Presenting only from Baking, generator only in Baking") {
  auto mocks = make_mock_backends(fixtures());
  std::mt19937_64 rng(4242);
  Session* current = nullptr;
  std::size_t outside_baking = 0, generator_calls = 0;
  const Mesh small = make_icosphere(2);
  auto spy = [&](const char*) {
    ++generator_calls;
    if (!current || current->state != S::Baking) ++outside_baking;
    if (rng() % 10 == 0) throw BackendError(BackendError::Code::Remote, "injected", 500);
  };
  mocks.backends.text_to_3d = std::make_shared<MockTextTo3D>([&](const std::string&) {
    spy("text");
    return small;
  });
  struct SpyImage final : ImageTo3DBackend {
    std::function<void()> hook;
    Mesh mesh;
    Mesh generate(const ImagePayload&, const Rect&) override {
      hook();
      return mesh;
    }
  };
  auto image_spy = std::make_shared<SpyImage>();
  image_spy->hook = [&] { spy("image"); };
  image_spy->mesh = small;
  mocks.backends.image_to_3d = image_spy;

  Pipeline p(mocks.backends, memory_repo());
  std::size_t bad_presenting = 0, undeclared = 0, presented = 0;
  p.set_observer([&](const Session&, S from, S to) {
    if (to == S::Presenting) {
      ++presented;
      if (from != S::Baking) ++bad_presenting;
    }
    if (!is_declared_edge(from, to)) ++undeclared;
  });

  const std::vector<std::string> phrases{"create an apple", "make a chair", "a desk lamp", "generate a sofa",
                                         "i want grapes", "a teapot please"};
  const std::vector<std::string> images{"office-scene", "fruit-table", "unknown-picture"};
  Session s = p.create_session();
  current = &s;
  std::size_t rejected = 0;
  for (int step = 0; step < 10000; ++step) {
    if (s.state == S::Failed || rng() % 50 == 0) {
      s = p.create_session();
    }
    ApiEvent e;
    switch (rng() % 6) {
      case 0: e = ev(EventType::Wake); break;
      case 1: e = say(phrases[rng() % phrases.size()]); break;
      case 2: e = ev(EventType::Stop); break;
      case 3: e = capture(images[rng() % images.size()]); break;
      case 4:
      case 5: {
        const MenuSource src[] = {MenuSource::Detected, MenuSource::Repository, MenuSource::Recommended};
        e = pick(src[rng() % 3], rng() % 6);
        break;
      }
    }
    const auto before = s.state;
    const auto history = s.state_history.size();
    try {
      p.handle(s, e);
    } catch (const IllegalTransition&) {
      ++rejected;
      CHECK(s.state == before);
      CHECK(s.state_history.size() == history);
    } catch (const std::invalid_argument&) {
      ++rejected;
      CHECK(s.state == before);
    }
  }
  CHECK(bad_presenting == 0);
  CHECK(outside_baking == 0);
  CHECK(undeclared == 0);
  CHECK(presented > 100);
  CHECK(generator_calls > 30);  // most repeats are cache hits
  CHECK(rejected > 1000);
}

TEST_CASE("report_metrics") {
  SUBCASE("no sessions") {
    const auto r = report_metrics({});
    CHECK(r["schema"] == kReportSchema);
    CHECK(r["sessions"] == 0);
    REQUIRE(r["rows"].size() == 5);
    CHECK(r["rows"][0]["mean"].is_null());
    CHECK(r["rows"][1]["value"].is_null());
    CHECK(r["rows"][2]["value"].is_null());
    CHECK(r["cache"]["hit_rate"].is_null());
    CHECK(r["recommendation"].is_null());
  }
  SUBCASE("mixed outcomes") {
    auto mocks = make_mock_backends(fixtures());
    Pipeline p(mocks.backends, memory_repo());
    std::vector<Session> sessions;
    for (int i = 0; i < 3; ++i) {
      Session s = p.create_session();
      speak_request(p, s, "create an apple");
      p.handle(s, pick(MenuSource::Detected, 0));
      sessions.push_back(std::move(s));
    }
    mocks.text_to_3d->set_behaviour(MockBehaviour{0ms, true, BackendError::Code::Remote});
    Session bad = p.create_session();
    speak_request(p, bad, "make a chair");
    p.handle(bad, pick(MenuSource::Detected, 0));
    REQUIRE(bad.state == S::Failed);
    sessions.push_back(std::move(bad));

    const auto r = report_metrics(sessions);
    std::vector<std::string> names;
    for (const auto& row : r["rows"]) names.push_back(row["metric"]);
    CHECK(names == std::vector<std::string>{"task completion time", "success rate", "error rate", "responsiveness",
                                            "mesh file size"});
    CHECK(r["rows"][1]["value"].get<double>() == doctest::Approx(0.75));
    CHECK(r["rows"][2]["value"].get<double>() == doctest::Approx(0.25));
    CHECK(r["cache"]["hits"] == 2);
    CHECK(r["cache"]["misses"] == 1);
    CHECK(r["cache"]["generator_invocations"] == 2);  // the failed call counts as an invocation
    CHECK(r["rows"][0]["n"] == 3);
    CHECK(r["errors"]["backend-remote-error"] == 1);
    CHECK(r["rows"][4]["after"]["n"] == 3);
    CHECK(r["time_to_object"]["cache_hit"]["n"] == 2);
    const auto& rec = r["recommendation"];
    CHECK(rec["diversity_index"].get<double>() >= 0.0);
    CHECK(rec["diversity_index"].get<double>() <= 1.0);
  }
}

TEST_CASE("run_script replays sessions and validates the served assets") {
  using nlohmann::json;
  auto mocks = make_mock_backends(fixtures());
  Pipeline p(mocks.backends, memory_repo());
  const json script{{"sessions",
                     {{{"language", "en"},
                       {"events", {{{"type", "wake"}}, {{"type", "transcript"}, {"text", "create an apple"}},
                                   {{"type", "stop"}}, {{"type", "selection"}, {"source", "detected"}, {"index", 0}}}}},
                      {{"events", {{{"type", "capture"}, {"image", "office-scene"}}}}},
                      {{"events", {{{"type", "wake"}}}}, {"expect", "Listening"}}}}};

  SUBCASE("without auto-select the capture session stops at Suggestions") {
    const auto r = run_script(p, script);
    CHECK_FALSE(r.ok);
    CHECK(r.summary["sessions"][1]["final_state"] == "Suggestions");
    CHECK(r.summary["sessions"][0]["ok"] == true);
    CHECK(r.summary["sessions"][2]["ok"] == true);
  }
  SUBCASE("auto-select first-detected finishes every session") {
    const auto r = run_script(p, script, ScriptOptions{true});
    CHECK(r.ok);
    REQUIRE(r.sessions.size() == 3);
    CHECK(r.sessions[1].state == S::Presenting);
    CHECK(r.summary["sessions"][1]["served"]["label"] == "chair");
    CHECK(r.summary["sessions"][0]["served"]["vertices"].get<std::size_t>() <= 1000);
    CHECK(r.summary["report"]["rows"].size() == 5);
  }
  SUBCASE("rejected events fail the run") {
    const json bad{{"events", {{{"type", "stop"}}}}, {"expect", "Welcome"}};
    const auto r = run_script(p, bad);
    CHECK_FALSE(r.ok);
    CHECK(r.summary["sessions"][0]["rejected"].size() == 1);
  }
  SUBCASE("malformed scripts") {
    CHECK_THROWS_AS(run_script(p, json::array()), std::invalid_argument);
    CHECK_THROWS_AS(run_script(p, json{{"sessions", json::array()}}), std::invalid_argument);
    CHECK_THROWS_AS(run_script(p, json{{"events", {{{"type", "nap"}}}}}), std::invalid_argument);
    CHECK_THROWS_AS(run_script(p, json{{"events", json::array()}, {"expect", "Dreaming"}}), std::invalid_argument);
  }
}
