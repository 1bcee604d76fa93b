// mesh.hpp - indexed triangle mesh, validation and statistics.
//
// Positions are stored as 32-bit floats so that the compact binary format
// round-trips bit-exactly. Geometry kernels promote to double internally.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mforge {

using Point3 = std::array<float, 3>;
using Face = std::array<std::uint32_t, 3>;

struct Color {
  float r = 0.0f;
  float g = 0.0f;
  float b = 0.0f;
  bool operator==(const Color&) const = default;
};

/// Triangle mesh. `colors` is either empty or has one entry per vertex.
struct Mesh {
  std::vector<Point3> vertices;
  std::vector<Face> faces;
  std::vector<Color> colors;

  bool operator==(const Mesh&) const = default;
};

enum class ViolationKind {
  IndexOutOfRange,
  DegenerateFace,
  NonFiniteCoordinate,
  InconsistentWinding,
  ColorCountMismatch,
  ColorOutOfRange,
};

const char* to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::size_t element = 0;  // face or vertex index, depending on kind
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::size_t count(ViolationKind kind) const;
  std::string summary() const;
};

/// Collects every invariant violation instead of stopping at the first one.
ValidationReport validate(const Mesh& mesh);

/// Thrown by operations that require a valid mesh.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

/// Throws ValidationError when the report is non-empty.
void require_valid(const Mesh& mesh);

struct BoundingBox {
  Point3 min{0.0f, 0.0f, 0.0f};
  Point3 max{0.0f, 0.0f, 0.0f};
};

struct MeshStats {
  std::size_t vertex_count = 0;
  std::size_t face_count = 0;
  std::size_t edge_count = 0;
  std::int64_t euler_characteristic = 0;
  std::map<std::string, std::size_t> serialized_size_bytes;
  BoundingBox bounding_box;
};

MeshStats stats(const Mesh& mesh);

/// Number of distinct undirected edges.
std::size_t count_edges(const Mesh& mesh);

/// Vertices on an edge used by exactly one face.
std::vector<bool> boundary_vertices(const Mesh& mesh);

bool is_closed(const Mesh& mesh);

}  // namespace mforge
