// Python bindings. Meshes cross as numpy arrays; structured results cross as
// JSON text and are decoded by the package's __init__.py.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "mforge/mesh_io.hpp"
#include "mforge/pipeline.hpp"
#include "mforge/primitives.hpp"
#include "mforge/script.hpp"

namespace py = pybind11;
using namespace mforge;
using nlohmann::json;

namespace {

using Vertices = py::array_t<float, py::array::c_style | py::array::forcecast>;
using Faces = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

Mesh mesh_from_arrays(const Vertices& v, const Faces& f) {
  if (v.ndim() != 2 || v.shape(1) != 3) throw py::value_error("vertices must have shape (V, 3)");
  if (f.ndim() != 2 || f.shape(1) != 3) throw py::value_error("faces must have shape (F, 3)");
  Mesh m;
  m.vertices.resize(static_cast<std::size_t>(v.shape(0)));
  m.faces.resize(static_cast<std::size_t>(f.shape(0)));
  std::memcpy(m.vertices.data(), v.data(), m.vertices.size() * sizeof(Point3));
  std::memcpy(m.faces.data(), f.data(), m.faces.size() * sizeof(Face));
  return m;
}

py::tuple mesh_to_arrays(const Mesh& m) {
  Vertices v({static_cast<py::ssize_t>(m.vertices.size()), py::ssize_t{3}});
  Faces f({static_cast<py::ssize_t>(m.faces.size()), py::ssize_t{3}});
  std::memcpy(v.mutable_data(), m.vertices.data(), m.vertices.size() * sizeof(Point3));
  std::memcpy(f.mutable_data(), m.faces.data(), m.faces.size() * sizeof(Face));
  return py::make_tuple(v, f);
}

json report_json(const SimplifyReport& r) {
  return {{"target_vertices", r.target_vertices}, {"initial_vertices", r.initial_vertices},
          {"initial_faces", r.initial_faces},     {"final_vertices", r.final_vertices},
          {"final_faces", r.final_faces},         {"collapses", r.collapses},
          {"total_error", r.total_error},         {"wall_time_seconds", r.wall_time_seconds},
          {"guard_blocked", r.guard_blocked}};
}

json suggestion_json(const ObjectSuggestion& s) {
  return {{"name", s.name}, {"color", s.color}, {"shape", s.shape}, {"location", s.location}};
}

// Repository plus its embedding provider, built from a path or in memory.
class PyRepository {
 public:
  explicit PyRepository(const std::string& path)
      : repo_(path.empty() ? std::make_shared<Repository>(RepositoryConfig{}, provider())
                           : std::make_shared<Repository>(path, RepositoryConfig{}, provider())) {}

  std::string add(const std::string& label, const Vertices& v, const Faces& f, const std::string& source) {
    const auto src = parse_asset_source(source);
    if (!src) throw py::value_error("unknown asset source: " + source);
    return repo_->add_asset(label, mesh_from_arrays(v, f), *src).id;
  }

  std::string query(const std::string& text, std::size_t k, double min_score) const {
    json out = json::array();
    const auto q = embed(text, repo_->provider());
    for (const auto& hit : repo_->query_similar(q, k, min_score)) {
      const auto rec = repo_->get(hit.id);
      out.push_back({{"id", hit.id}, {"label", rec ? rec->label : ""}, {"score", hit.score}});
    }
    return out.dump();
  }

  std::optional<std::string> find_duplicate(const std::string& label) const { return repo_->find_duplicate(label); }

  py::tuple mesh(const std::string& id) const {
    const auto rec = repo_->get(id);
    if (!rec) throw py::key_error(id);
    return mesh_to_arrays(repo_->get_mesh(rec->mesh_ref));
  }

  std::string stats() const {
    const auto s = repo_->stats();
    return json{{"records", s.records},         {"dimension", s.dimension}, {"blobs", s.blobs},
                {"blob_bytes", s.blob_bytes},   {"total_hits", s.total_hits}, {"by_source", s.by_source}}
        .dump();
  }

  std::size_t size() const { return repo_->size(); }
  std::shared_ptr<Repository> shared() const { return repo_; }

 private:
  static std::shared_ptr<EmbeddingProvider> provider() { return std::make_shared<HashingEmbeddingProvider>(); }
  std::shared_ptr<Repository> repo_;
};

}  // namespace

PYBIND11_MODULE(_mforge, m) {
  m.doc() = "mforge native core";

  m.def("icosphere", [](int level) { return mesh_to_arrays(make_icosphere(level)); }, py::arg("level"));
  m.def("procedural_mesh", [](const std::string& key) { return mesh_to_arrays(procedural_mesh(key)); },
        py::arg("key"));

  m.def(
      "simplify",
      [](const Vertices& v, const Faces& f, std::size_t target, bool preserve_boundary, bool midpoint) {
        SimplifyConfig cfg;
        cfg.target_vertices = target;
        cfg.preserve_boundary = preserve_boundary;
        if (midpoint) cfg.placement_strategy = PlacementStrategy::MidpointFallback;
        const Mesh in = mesh_from_arrays(v, f);
        SimplifyResult r;
        {
          py::gil_scoped_release release;
          r = simplify(in, cfg);
        }
        auto arrays = mesh_to_arrays(r.mesh);
        return py::make_tuple(arrays[0], arrays[1], report_json(r.report).dump());
      },
      py::arg("vertices"), py::arg("faces"), py::arg("target") = 1000, py::arg("preserve_boundary") = true,
      py::arg("midpoint") = false);

  m.def(
      "validate",
      [](const Vertices& v, const Faces& f) {
        const auto r = validate(mesh_from_arrays(v, f));
        return py::make_tuple(r.ok(), r.summary());
      },
      py::arg("vertices"), py::arg("faces"));

  m.def(
      "mesh_stats",
      [](const Vertices& v, const Faces& f) {
        const auto s = stats(mesh_from_arrays(v, f));
        return json{{"vertices", s.vertex_count},
                    {"faces", s.face_count},
                    {"edges", s.edge_count},
                    {"euler_characteristic", s.euler_characteristic},
                    {"serialized_size_bytes", s.serialized_size_bytes}}
            .dump();
      },
      py::arg("vertices"), py::arg("faces"));

  m.def(
      "encode",
      [](const Vertices& v, const Faces& f, const std::string& format) {
        const auto fmt = parse_format(format);
        if (!fmt) throw py::value_error("unknown format: " + format);
        return py::bytes(write_mesh(mesh_from_arrays(v, f), *fmt));
      },
      py::arg("vertices"), py::arg("faces"), py::arg("format") = "binary");
  m.def(
      "decode",
      [](const py::bytes& data, const std::string& format) {
        const auto fmt = parse_format(format);
        if (!fmt) throw py::value_error("unknown format: " + format);
        return mesh_to_arrays(read_mesh(std::string(data), *fmt));
      },
      py::arg("data"), py::arg("format") = "binary");
  m.def("compact_binary_size", &compact_binary_size, py::arg("vertices"), py::arg("faces"));

  m.def(
      "parse_suggestion_line",
      [](const std::string& line) -> std::optional<std::string> {
        const auto s = parse_suggestion_line(line);
        if (!s) return std::nullopt;
        return suggestion_json(*s).dump();
      },
      py::arg("line"));
  m.def(
      "format_suggestion",
      [](const std::string& name, const std::string& color, const std::string& shape, const std::string& location) {
        return format_suggestion({name, color, shape, location});
      },
      py::arg("name"), py::arg("color") = "", py::arg("shape") = "", py::arg("location") = "");
  m.def(
      "diversity_index",
      [](const std::vector<std::string>& labels) {
        const auto d = diversity_index(labels);
        return json{{"entropy_bits", d.entropy_bits},
                    {"normalized", d.normalized},
                    {"distinct", d.distinct},
                    {"total", d.total}}
            .dump();
      },
      py::arg("labels"));

  m.def(
      "transition",
      [](const std::string& state, const std::string& trigger) -> std::optional<std::string> {
        const auto s = parse_session_state(state);
        if (!s) throw py::value_error("unknown state: " + state);
        for (auto t : {Trigger::Wake, Trigger::Stop, Trigger::MenusReady, Trigger::Capture, Trigger::VlmReply,
                       Trigger::Selection, Trigger::AssetReady, Trigger::BackendError}) {
          if (trigger != to_string(t)) continue;
          const auto next = transition(*s, t);
          if (!next) return std::nullopt;
          return std::string(to_string(*next));
        }
        throw py::value_error("unknown trigger: " + trigger);
      },
      py::arg("state"), py::arg("trigger"));

  py::class_<PyRepository>(m, "Repository")
      .def(py::init<const std::string&>(), py::arg("path") = "")
      .def("add", &PyRepository::add, py::arg("label"), py::arg("vertices"), py::arg("faces"),
           py::arg("source") = "generated")
      .def("_query", &PyRepository::query, py::arg("text"), py::arg("k") = 5, py::arg("min_score") = 0.0)
      .def("find_duplicate", &PyRepository::find_duplicate, py::arg("label"))
      .def("mesh", &PyRepository::mesh, py::arg("id"))
      .def("_stats", &PyRepository::stats)
      .def("__len__", &PyRepository::size);

  m.def(
      "run_script",
      [](const std::string& script, const std::string& repo_path, std::size_t target, bool auto_select) {
        const auto fixtures = MockFixtures::load(MockFixtures::default_dir());
        auto mocks = make_mock_backends(fixtures);
        PyRepository repo(repo_path);
        PipelineConfig cfg;
        cfg.simplify.target_vertices = target;
        Pipeline pipeline(mocks.backends, repo.shared(), cfg);
        json parsed;
        try {
          parsed = json::parse(script);
        } catch (const json::exception& e) {
          throw py::value_error(std::string("script is not JSON: ") + e.what());
        }
        py::gil_scoped_release release;
        return run_script(pipeline, parsed, ScriptOptions{auto_select}).summary.dump();
      },
      py::arg("script"), py::arg("repo") = "", py::arg("target") = 1000, py::arg("auto_select") = false);

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<RepositoryError>(m, "RepositoryError", PyExc_RuntimeError);
}
