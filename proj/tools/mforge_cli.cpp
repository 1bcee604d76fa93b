// mforge - command-line front end.
//
//   mforge serve [--bind H:P] [--repo DIR] [--token T] [--target N] [--backends FILE]
//   mforge simplify INPUT -o OUTPUT [--target N] [--report FILE]
//   mforge repo add|query|stats --repo DIR ...
//   mforge bench sweep [INPUT...] [--targets 500,800,1000,1500,2000]
//   mforge session run --script FILE [--auto-select first-detected]
//
// INPUT is a mesh file (.obj, .mforge) or a generated source: icosphere:L,
// procedural:LABEL, or dense:N (a closed N-vertex mesh decimated from a
// level-6 icosphere).

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mforge/gateway.hpp"
#include "mforge/mesh_io.hpp"
#include "mforge/primitives.hpp"
#include "mforge/script.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mforge;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Mesh load_input(const std::string& source) {
  const auto colon = source.find(':');
  if (colon != std::string::npos && !fs::exists(source)) {
    const std::string kind = source.substr(0, colon);
    const std::string arg = source.substr(colon + 1);
    try {
      if (kind == "icosphere") {
        const int level = std::stoi(arg);
        if (level < 0 || level > 7) throw UsageError("icosphere level must be 0..7");
        return make_icosphere(level);
      }
      if (kind == "procedural") return procedural_mesh(arg);
      if (kind == "dense") {
        const auto n = std::stoul(arg);
        const Mesh base = make_icosphere(6);
        if (n < kMinTargetVertices || n > base.vertices.size()) throw UsageError("dense:N needs 4 <= N <= 40962");
        SimplifyConfig cfg;
        cfg.target_vertices = n;
        return simplify(base, cfg).mesh;
      }
    } catch (const std::logic_error&) {
      throw UsageError("bad mesh source '" + source + "'");
    }
    throw UsageError("unknown mesh source '" + kind + "'");
  }
  return load_mesh(source);
}

std::vector<std::size_t> parse_targets(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw UsageError("targets must be a comma-separated list of integers");
    }
    out.push_back(std::stoul(item));
  }
  if (out.empty()) throw UsageError("no targets given");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<BackendDescriptor> load_descriptors(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read backends file " + path);
  const json j = json::parse(in);
  const json& list = j.is_object() && j.contains("backends") ? j["backends"] : j;
  if (!list.is_array()) throw UsageError("backends file must hold an array of descriptors");
  std::vector<BackendDescriptor> out;
  for (const auto& d : list) out.push_back(BackendDescriptor::from_json(d));
  return out;
}

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

json report_json(const SimplifyReport& r) {
  return {{"target_vertices", r.target_vertices},
          {"initial_vertices", r.initial_vertices},
          {"initial_faces", r.initial_faces},
          {"final_vertices", r.final_vertices},
          {"final_faces", r.final_faces},
          {"collapses", r.collapses},
          {"total_error", r.total_error},
          {"wall_time_seconds", r.wall_time_seconds},
          {"guard_blocked", r.guard_blocked},
          {"initial_binary_bytes", compact_binary_size(r.initial_vertices, r.initial_faces)},
          {"final_binary_bytes", compact_binary_size(r.final_vertices, r.final_faces)}};
}

std::shared_ptr<Repository> open_repo(const std::string& dir) {
  if (dir.empty()) throw UsageError("--repo is required (or set MFORGE_REPO)");
  return std::make_shared<Repository>(dir, RepositoryConfig{}, std::make_shared<HashingEmbeddingProvider>());
}

void print_metrics_table(const json& report, std::ostream& os) {
  auto num = [](const json& v, int precision = 3) {
    if (v.is_null()) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v.get<double>();
    return s.str();
  };
  os << "metric                      value\n";
  for (const auto& row : report["rows"]) {
    const std::string name = row["metric"];
    std::string value;
    if (row.contains("value")) {
      value = num(row["value"]);
    } else if (name == "mesh file size") {
      value = num(row["before"]["mean"], 0) + " -> " + num(row["after"]["mean"], 0) + " bytes";
    } else {
      value = num(row["mean"]) + " s (median " + num(row["median"]) + ")";
    }
    os << std::left << std::setw(28) << name << value << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mforge: mesh simplification, asset repository and session pipeline"};
  app.require_subcommand(1);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the REST + SSE gateway");
  ApiConfig api;
  std::string serve_bind, serve_repo, serve_token, serve_backends, serve_static, serve_fixtures;
  std::size_t serve_target = 1000;
  serve->add_option("--bind", serve_bind, "host:port (env MFORGE_BIND)");
  serve->add_option("--repo", serve_repo, "Repository directory (env MFORGE_REPO)");
  serve->add_option("--token", serve_token, "Shared secret (env MFORGE_TOKEN)");
  serve->add_option("--target", serve_target, "Simplify target vertex count")->check(CLI::Range(4, 1 << 30));
  serve->add_option("--backends", serve_backends, "JSON file of backend descriptors");
  serve->add_option("--static", serve_static, "Console build to serve at /");
  serve->add_option("--fixtures", serve_fixtures, "Mock fixture directory");

  // simplify
  auto* simp = app.add_subcommand("simplify", "Decimate one mesh to a vertex budget");
  std::string simp_in, simp_out, simp_report, simp_strategy = "optimal";
  std::size_t simp_target = 1000;
  bool simp_free_boundary = false;
  simp->add_option("input", simp_in, "Mesh file or generated source")->required();
  simp->add_option("-o,--output", simp_out, "Output mesh (.mforge or .obj)")->required();
  simp->add_option("--target", simp_target, "Target vertex count")->check(CLI::Range(4, 1 << 30));
  simp->add_option("--report", simp_report, "Write the report JSON here instead of stdout");
  simp->add_option("--placement", simp_strategy, "optimal | midpoint")
      ->check(CLI::IsMember({"optimal", "midpoint"}));
  simp->add_flag("--free-boundary", simp_free_boundary, "Allow collapses on boundary edges");

  // repo
  auto* repo = app.add_subcommand("repo", "Inspect or extend an asset repository");
  repo->require_subcommand(1);
  std::string repo_dir;
  repo->add_option("--repo", repo_dir, "Repository directory (env MFORGE_REPO)");
  auto* repo_add = repo->add_subcommand("add", "Store a mesh under a label");
  std::string add_label, add_mesh, add_source = "imported";
  repo_add->add_option("--label", add_label, "Text label")->required();
  repo_add->add_option("mesh", add_mesh, "Mesh file or generated source")->required();
  repo_add->add_option("--source", add_source, "generated | imported | image-derived")
      ->check(CLI::IsMember({"generated", "imported", "image-derived"}));
  auto* repo_query = repo->add_subcommand("query", "Nearest labels by cosine similarity");
  std::string query_text;
  std::size_t query_k = 5;
  double query_min = -1.0;
  repo_query->add_option("text", query_text, "Query text")->required();
  repo_query->add_option("-k", query_k, "Number of hits")->check(CLI::PositiveNumber);
  repo_query->add_option("--min-score", query_min, "Minimum cosine score");
  auto* repo_stats = repo->add_subcommand("stats", "Record, blob and hit counts");

  // bench
  auto* bench = app.add_subcommand("bench", "Benchmarks");
  bench->require_subcommand(1);
  auto* sweep = bench->add_subcommand("sweep", "Vertex budget sweep over one or more meshes");
  std::vector<std::string> sweep_inputs;
  std::string sweep_targets = "500,800,1000,1500,2000", sweep_dir, sweep_out;
  bool sweep_table = false;
  sweep->add_option("inputs", sweep_inputs, "Mesh files or generated sources (default dense:13944)");
  sweep->add_option("--meshes", sweep_dir, "Directory of .obj / .mforge meshes");
  sweep->add_option("--targets", sweep_targets, "Comma-separated targets");
  sweep->add_option("-o,--output", sweep_out, "Write JSON here instead of stdout");
  sweep->add_flag("--table", sweep_table, "Also print a text table to stderr");

  // session
  auto* session = app.add_subcommand("session", "Scripted sessions");
  session->require_subcommand(1);
  auto* run = session->add_subcommand("run", "Replay a session script headlessly");
  std::string run_script_path, run_repo, run_report, run_auto, run_backends, run_fixtures;
  std::size_t run_target = 1000;
  long run_gen_ms = 0, run_fetch_ms = 0;
  bool run_table = false;
  run->add_option("--script", run_script_path, "Script JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--repo", run_repo, "Persist assets here (default: in memory)");
  run->add_option("--report", run_report, "Write the full summary JSON here instead of stdout");
  run->add_option("--auto-select", run_auto, "Selection policy for headless runs")
      ->check(CLI::IsMember({"first-detected"}));
  run->add_option("--target", run_target, "Simplify target vertex count")->check(CLI::Range(4, 1 << 30));
  run->add_option("--backends", run_backends, "JSON file of backend descriptors");
  run->add_option("--fixtures", run_fixtures, "Mock fixture directory");
  run->add_option("--generator-latency-ms", run_gen_ms, "Sleep added to mock generators")->check(CLI::NonNegativeNumber);
  run->add_option("--retrieval-latency-ms", run_fetch_ms, "Sleep added to cache retrieval")->check(CLI::NonNegativeNumber);
  run->add_flag("--table", run_table, "Print the metrics table to stderr");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) {
      api = ApiConfig{}.with_env();
      if (!serve_bind.empty()) api.bind = serve_bind;
      if (!serve_repo.empty()) api.repo_path = serve_repo;
      if (!serve_token.empty()) api.token = serve_token;
      api.simplify_target = serve_target;
      api.descriptors = load_descriptors(serve_backends);
      api.static_dir = serve_static;
      api.fixtures_dir = serve_fixtures;

      // Block termination signals so sigwait below receives them.
      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);

      GatewayServer server(api);
      server.start();
      std::cerr << "mforge: serving on " << server.host() << ":" << server.port()
                << (api.repo_path.empty() ? " (in-memory repository)" : " repo " + api.repo_path.string()) << "\n";
      int sig = 0;
      sigwait(&signals, &sig);
      std::cerr << "mforge: signal " << sig << ", draining\n";
      server.stop();
      return 0;
    }

    if (*simp) {
      const Mesh mesh = load_input(simp_in);
      SimplifyConfig cfg;
      cfg.target_vertices = simp_target;
      cfg.preserve_boundary = !simp_free_boundary;
      cfg.placement_strategy =
          simp_strategy == "midpoint" ? PlacementStrategy::MidpointFallback : PlacementStrategy::OptimalSolve;
      const auto result = simplify(mesh, cfg);
      save_mesh(simp_out, result.mesh);
      auto report = report_json(result.report);
      report["input"] = simp_in;
      report["output"] = simp_out;
      report["output_bytes"] = fs::file_size(simp_out);
      write_json(report, simp_report);
      return 0;
    }

    if (*repo) {
      if (repo_dir.empty()) {
        if (const char* env = std::getenv("MFORGE_REPO")) repo_dir = env;
      }
      auto r = open_repo(repo_dir);
      if (*repo_add) {
        const auto rec = r->add_asset(add_label, load_input(add_mesh), *parse_asset_source(add_source));
        auto j = to_json(rec);
        j.erase("embedding");
        write_json(j, "");
      } else if (*repo_query) {
        const auto hits = r->query_similar(embed(query_text, r->provider()), query_k, query_min);
        json out = json::array();
        for (const auto& h : hits) out.push_back({{"id", h.id}, {"label", r->get(h.id)->label}, {"score", h.score}});
        write_json({{"query", query_text}, {"hits", out}}, "");
      } else if (*repo_stats) {
        const auto s = r->stats();
        write_json({{"records", s.records},
                    {"dimension", s.dimension},
                    {"blobs", s.blobs},
                    {"blob_bytes", s.blob_bytes},
                    {"total_hits", s.total_hits},
                    {"by_source", s.by_source}},
                   "");
      }
      return 0;
    }

    if (*sweep) {
      const auto targets = parse_targets(sweep_targets);
      std::vector<std::string> inputs = sweep_inputs;
      if (!sweep_dir.empty()) {
        std::vector<std::string> found;
        for (const auto& e : fs::directory_iterator(sweep_dir)) {
          if (e.is_regular_file() && format_from_path(e.path())) found.push_back(e.path().string());
        }
        std::sort(found.begin(), found.end());
        if (found.empty()) throw UsageError("no meshes in " + sweep_dir);
        inputs.insert(inputs.end(), found.begin(), found.end());
      }
      if (inputs.empty()) inputs.push_back("dense:13944");

      // Per target, averaged over the inputs.
      std::vector<json> per_input;
      std::vector<std::vector<SimplifyReport>> all;
      for (const auto& in : inputs) {
        const Mesh m = load_input(in);
        per_input.push_back({{"input", in}, {"vertices", m.vertices.size()}, {"faces", m.faces.size()},
                             {"binary_bytes", compact_binary_size(m.vertices.size(), m.faces.size())}});
        all.push_back(vertex_budget_sweep(m, targets));
      }
      json rows = json::array();
      for (std::size_t t = 0; t < targets.size(); ++t) {
        double v = 0, f = 0, bytes = 0, ratio = 0, secs = 0, err = 0;
        bool blocked = false;
        for (const auto& reps : all) {
          const auto& r = reps[t];
          const double out_bytes = double(compact_binary_size(r.final_vertices, r.final_faces));
          v += double(r.final_vertices);
          f += double(r.final_faces);
          bytes += out_bytes;
          ratio += double(compact_binary_size(r.initial_vertices, r.initial_faces)) / out_bytes;
          secs += r.wall_time_seconds;
          err += r.total_error;
          blocked = blocked || r.guard_blocked;
        }
        const double n = double(all.size());
        rows.push_back({{"target_vertices", targets[t]},
                        {"vertices", v / n},
                        {"faces", f / n},
                        {"binary_bytes", bytes / n},
                        {"size_ratio", ratio / n},
                        {"simplify_seconds", secs / n},
                        {"total_error", err / n},
                        {"guard_blocked", blocked}});
      }
      const json out{{"inputs", per_input}, {"rows", rows}};
      write_json(out, sweep_out);
      if (sweep_table) {
        std::cerr << "target   vertices  faces     bytes      ratio   seconds\n" << std::fixed;
        for (const auto& r : rows) {
          std::cerr << std::left << std::setprecision(0) << std::setw(9) << r["target_vertices"].get<double>()
                    << std::setw(10) << r["vertices"].get<double>() << std::setw(10) << r["faces"].get<double>()
                    << std::setw(11) << r["binary_bytes"].get<double>() << std::setprecision(2) << std::setw(8)
                    << r["size_ratio"].get<double>() << std::setprecision(3) << r["simplify_seconds"].get<double>()
                    << "\n";
        }
      }
      return 0;
    }

    if (*run) {
      std::ifstream in(run_script_path);
      const json script = json::parse(in);
      ApiConfig cfg;
      cfg.bind = "127.0.0.1:0";
      cfg.repo_path = run_repo;
      cfg.simplify_target = run_target;
      cfg.descriptors = load_descriptors(run_backends);
      cfg.fixtures_dir = run_fixtures;
      PipelineConfig pc;
      pc.retrieval_latency = std::chrono::milliseconds(run_fetch_ms);
      MockBehaviour gen;
      gen.latency = std::chrono::milliseconds(run_gen_ms);
      auto pipeline = make_pipeline(cfg, pc, gen);
      ScriptOptions opts;
      opts.auto_select_first_detected = run_auto == "first-detected";
      const auto result = run_script(*pipeline, script, opts);
      write_json(result.summary, run_report);
      if (run_table) print_metrics_table(result.summary["report"], std::cerr);
      for (const auto& s : result.summary["sessions"]) {
        if (!s["ok"].get<bool>()) {
          std::cerr << "mforge: session " << s["id"].get<std::string>() << " ended in "
                    << s["final_state"].get<std::string>() << ", expected " << s["expected_state"].get<std::string>()
                    << "\n";
        }
      }
      return result.ok ? 0 : 1;
    }
  } catch (const UsageError& e) {
    std::cerr << "mforge: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mforge: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
