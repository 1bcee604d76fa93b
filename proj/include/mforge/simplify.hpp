// simplify.hpp - quadric edge-collapse decimation to a target vertex count.
//
// Each vertex carries the sum of the area-weighted plane quadrics of its
// incident faces. Every edge is a collapse candidate whose cost is the merged
// quadric evaluated at the best placement. Candidates live in a min-heap with
// lazy deletion: each entry carries the version stamps of its endpoints and is
// skipped on pop when either endpoint has changed since it was pushed.
//
// A popped candidate is executed only if it passes the guards:
//   - boundary: with preserve_boundary, edges touching a boundary vertex are frozen
//   - manifold: the link condition must hold (common neighbours of the endpoints
//     are exactly the apexes of the faces on the edge, and no collapse may fold
//     two faces onto the same vertex triple)
//   - orientation: no surviving face may turn over (dot of old and new normal <= 0)
//
// Equal-cost candidates are ordered by their (min index, max index) key.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mforge/mesh.hpp"
#include "mforge/quadric.hpp"

namespace mforge {

enum class PlacementStrategy {
  OptimalSolve,     // solve the 3x3 system, fall back to best of {v1, v2, midpoint}
  MidpointFallback, // never solve; best of {v1, v2, midpoint}
};

struct SimplifyConfig {
  std::size_t target_vertices = 1000;
  bool preserve_boundary = true;
  PlacementStrategy placement_strategy = PlacementStrategy::OptimalSolve;
  double singular_threshold = 1e-12;
};

inline constexpr std::size_t kMinTargetVertices = 4;

struct VertexPair {
  std::uint32_t a = 0;  // a < b
  std::uint32_t b = 0;
  bool operator==(const VertexPair&) const = default;
  auto operator<=>(const VertexPair&) const = default;
};

struct CollapseCandidate {
  VertexPair edge;
  double cost = 0.0;
  Vec3d placement{};
};

struct SimplifyReport {
  std::size_t target_vertices = 0;
  std::size_t initial_vertices = 0;
  std::size_t initial_faces = 0;
  std::size_t final_vertices = 0;
  std::size_t final_faces = 0;
  std::size_t collapses = 0;
  double total_error = 0.0;
  double wall_time_seconds = 0.0;
  /// Guards blocked every remaining candidate before the target was reached.
  bool guard_blocked = false;
};

struct SimplifyResult {
  Mesh mesh;
  SimplifyReport report;
};

/// Area-weighted sum of incident face plane quadrics, one per vertex.
std::vector<Quadric> compute_vertex_quadrics(const Mesh& mesh);

CollapseCandidate collapse_cost(const Quadric& q1, const Quadric& q2, const Vec3d& v1, const Vec3d& v2,
                                const SimplifyConfig& cfg);

/// Working state exposed to a collapse observer; indices are input-mesh indices.
struct SimplifyState {
  std::span<const Vec3d> positions;
  std::span<const Quadric> quadrics;
  std::span<const Face> faces;
  std::span<const std::uint8_t> face_alive;
  std::span<const std::uint8_t> vertex_alive;
  std::span<const std::uint8_t> vertex_locked;
};

/// Invoked immediately before each collapse with the state it is applied to.
/// The endpoint `edge.a` survives and moves to `placement`; `edge.b` is removed.
using CollapseObserver = std::function<void(const SimplifyState&, const CollapseCandidate&)>;

/// Throws std::invalid_argument if cfg.target_vertices < 4 and ValidationError for invalid meshes.
SimplifyResult simplify(const Mesh& mesh, const SimplifyConfig& cfg, const CollapseObserver& observer = {});

/// One independent simplification per target; targets must be ascending and >= 4.
std::vector<SimplifyReport> vertex_budget_sweep(const Mesh& mesh, std::span<const std::size_t> targets,
                                                const SimplifyConfig& base = {});

}  // namespace mforge
