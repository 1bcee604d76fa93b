#include "mforge/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "mforge/mesh_io.hpp"

namespace mforge {

namespace {

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  if (a > b) std::swap(a, b);
  return (std::uint64_t{a} << 32) | b;
}

std::uint64_t directed_key(std::uint32_t from, std::uint32_t to) {
  return (std::uint64_t{from} << 32) | to;
}

}  // namespace

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::IndexOutOfRange: return "index-out-of-range";
    case ViolationKind::DegenerateFace: return "degenerate-face";
    case ViolationKind::NonFiniteCoordinate: return "non-finite-coordinate";
    case ViolationKind::InconsistentWinding: return "inconsistent-winding";
    case ViolationKind::ColorCountMismatch: return "color-count-mismatch";
    case ViolationKind::ColorOutOfRange: return "color-out-of-range";
  }
  return "unknown";
}

std::size_t ValidationReport::count(ViolationKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      violations.begin(), violations.end(), [kind](const Violation& v) { return v.kind == kind; }));
}

std::string ValidationReport::summary() const {
  if (ok()) return "valid";
  std::ostringstream out;
  out << violations.size() << " violation(s)";
  const std::size_t shown = std::min<std::size_t>(violations.size(), 5);
  for (std::size_t i = 0; i < shown; ++i) {
    out << (i == 0 ? ": " : "; ") << to_string(violations[i].kind) << " @" << violations[i].element;
    if (!violations[i].detail.empty()) out << " (" << violations[i].detail << ")";
  }
  if (shown < violations.size()) out << "; ...";
  return out.str();
}

ValidationError::ValidationError(ValidationReport report)
    : std::runtime_error("invalid mesh: " + report.summary()), report_(std::move(report)) {}

ValidationReport validate(const Mesh& mesh) {
  ValidationReport report;
  const std::size_t n = mesh.vertices.size();

  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = mesh.vertices[i];
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      report.violations.push_back({ViolationKind::NonFiniteCoordinate, i, {}});
    }
  }

  if (!mesh.colors.empty()) {
    if (mesh.colors.size() != n) {
      report.violations.push_back({ViolationKind::ColorCountMismatch, mesh.colors.size(),
                                   "expected " + std::to_string(n)});
    }
    for (std::size_t i = 0; i < mesh.colors.size(); ++i) {
      const auto& c = mesh.colors[i];
      auto in_unit = [](float x) { return x >= 0.0f && x <= 1.0f; };
      if (!in_unit(c.r) || !in_unit(c.g) || !in_unit(c.b)) {
        report.violations.push_back({ViolationKind::ColorOutOfRange, i, {}});
      }
    }
  }

  // Winding: a directed edge may be used by at most one face.
  std::unordered_map<std::uint64_t, std::size_t> directed;
  directed.reserve(mesh.faces.size() * 3);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    bool in_range = true;
    for (auto idx : face) {
      if (idx >= n) {
        report.violations.push_back(
            {ViolationKind::IndexOutOfRange, f, "vertex " + std::to_string(idx)});
        in_range = false;
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      report.violations.push_back({ViolationKind::DegenerateFace, f, {}});
      continue;
    }
    if (!in_range) continue;
    for (int k = 0; k < 3; ++k) {
      const auto key = directed_key(face[k], face[(k + 1) % 3]);
      auto [it, inserted] = directed.emplace(key, f);
      if (!inserted) {
        report.violations.push_back({ViolationKind::InconsistentWinding, f,
                                     "shares directed edge with face " + std::to_string(it->second)});
      }
    }
  }
  return report;
}

void require_valid(const Mesh& mesh) {
  auto report = validate(mesh);
  if (!report.ok()) throw ValidationError(std::move(report));
}

std::size_t count_edges(const Mesh& mesh) {
  std::unordered_set<std::uint64_t> edges;
  edges.reserve(mesh.faces.size() * 2);
  for (const auto& f : mesh.faces) {
    edges.insert(edge_key(f[0], f[1]));
    edges.insert(edge_key(f[1], f[2]));
    edges.insert(edge_key(f[2], f[0]));
  }
  return edges.size();
}

std::vector<bool> boundary_vertices(const Mesh& mesh) {
  std::unordered_map<std::uint64_t, int> uses;
  uses.reserve(mesh.faces.size() * 2);
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) ++uses[edge_key(f[k], f[(k + 1) % 3])];
  }
  std::vector<bool> boundary(mesh.vertices.size(), false);
  for (const auto& [key, count] : uses) {
    if (count == 1) {
      boundary[key >> 32] = true;
      boundary[key & 0xffffffffu] = true;
    }
  }
  return boundary;
}

bool is_closed(const Mesh& mesh) {
  std::unordered_map<std::uint64_t, int> uses;
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) ++uses[edge_key(f[k], f[(k + 1) % 3])];
  }
  return !uses.empty() &&
         std::all_of(uses.begin(), uses.end(), [](const auto& kv) { return kv.second == 2; });
}

MeshStats stats(const Mesh& mesh) {
  require_valid(mesh);

  MeshStats s;
  s.vertex_count = mesh.vertices.size();
  s.face_count = mesh.faces.size();
  s.edge_count = count_edges(mesh);
  s.euler_characteristic = static_cast<std::int64_t>(s.vertex_count) -
                           static_cast<std::int64_t>(s.edge_count) +
                           static_cast<std::int64_t>(s.face_count);
  s.serialized_size_bytes[format_name(MeshFormat::CompactBinary)] =
      compact_binary_size(s.vertex_count, s.face_count);
  s.serialized_size_bytes[format_name(MeshFormat::TextObj)] =
      write_mesh(mesh, MeshFormat::TextObj).size();

  if (!mesh.vertices.empty()) {
    s.bounding_box.min = s.bounding_box.max = mesh.vertices.front();
    for (const auto& p : mesh.vertices) {
      for (int k = 0; k < 3; ++k) {
        s.bounding_box.min[k] = std::min(s.bounding_box.min[k], p[k]);
        s.bounding_box.max[k] = std::max(s.bounding_box.max[k], p[k]);
      }
    }
  }
  return s;
}

}  // namespace mforge
