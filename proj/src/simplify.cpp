#include "mforge/simplify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <queue>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace mforge {

namespace {

Vec3d to_d(const Point3& p) { return {p[0], p[1], p[2]}; }
Vec3d sub(const Vec3d& a, const Vec3d& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3d cross(const Vec3d& a, const Vec3d& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3d& a, const Vec3d& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3d face_normal(const Vec3d& p0, const Vec3d& p1, const Vec3d& p2) {
  return cross(sub(p1, p0), sub(p2, p0));
}

bool face_has(const Face& f, std::uint32_t v) { return f[0] == v || f[1] == v || f[2] == v; }

struct HeapEntry {
  double cost;
  std::uint32_t a;
  std::uint32_t b;
  std::uint32_t version_a;
  std::uint32_t version_b;
  Vec3d placement;
};

struct EntryAfter {
  bool operator()(const HeapEntry& x, const HeapEntry& y) const {
    if (x.cost != y.cost) return x.cost > y.cost;
    if (x.a != y.a) return x.a > y.a;
    return x.b > y.b;
  }
};

class Decimator {
 public:
  Decimator(const Mesh& mesh, const SimplifyConfig& cfg) : cfg_(cfg) {
    const std::size_t nv = mesh.vertices.size();
    pos_.reserve(nv);
    for (const auto& p : mesh.vertices) pos_.push_back(to_d(p));
    quadrics_ = compute_vertex_quadrics(mesh);
    faces_ = mesh.faces;
    face_alive_.assign(faces_.size(), 1);
    vertex_alive_.assign(nv, 1);
    locked_.assign(nv, 0);
    version_.assign(nv, 0);
    vertex_faces_.resize(nv);
    for (std::uint32_t f = 0; f < faces_.size(); ++f) {
      for (auto v : faces_[f]) vertex_faces_[v].push_back(f);
    }
    lock_unsafe_vertices();
    alive_count_ = nv;
  }

  void run(std::size_t target, const CollapseObserver& observer, SimplifyReport& report) {
    seed_heap();
    while (alive_count_ > target) {
      if (heap_.empty()) {
        report.guard_blocked = true;
        break;
      }
      HeapEntry e = heap_.top();
      heap_.pop();
      if (!vertex_alive_[e.a] || !vertex_alive_[e.b]) continue;
      if (version_[e.a] != e.version_a || version_[e.b] != e.version_b) continue;
      if (!collapse_allowed(e.a, e.b, e.placement)) continue;

      CollapseCandidate chosen{{e.a, e.b}, e.cost, e.placement};
      if (observer) observer(state(), chosen);
      collapse(e.a, e.b, e.placement);
      report.total_error += e.cost;
      ++report.collapses;
    }
  }

  Mesh extract(const Mesh& source) const {
    Mesh out;
    std::vector<std::uint32_t> remap(pos_.size(), UINT32_MAX);
    const bool with_color = !source.colors.empty();
    for (std::uint32_t v = 0; v < pos_.size(); ++v) {
      if (!vertex_alive_[v]) continue;
      remap[v] = static_cast<std::uint32_t>(out.vertices.size());
      out.vertices.push_back({static_cast<float>(pos_[v][0]), static_cast<float>(pos_[v][1]),
                              static_cast<float>(pos_[v][2])});
      if (with_color) out.colors.push_back(source.colors[v]);
    }
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!face_alive_[f]) continue;
      const auto& face = faces_[f];
      out.faces.push_back({remap[face[0]], remap[face[1]], remap[face[2]]});
    }
    return out;
  }

  std::size_t alive_count() const { return alive_count_; }

 private:
  SimplifyState state() const {
    return {pos_, quadrics_, faces_, face_alive_, vertex_alive_, locked_};
  }

  // Boundary vertices (when preserving boundary) and vertices on non-manifold
  // edges never move.
  void lock_unsafe_vertices() {
    std::unordered_map<std::uint64_t, int> uses;
    uses.reserve(faces_.size() * 2);
    for (const auto& f : faces_) {
      for (int k = 0; k < 3; ++k) {
        std::uint32_t a = f[k], b = f[(k + 1) % 3];
        if (a > b) std::swap(a, b);
        ++uses[(std::uint64_t{a} << 32) | b];
      }
    }
    for (const auto& [key, count] : uses) {
      if (count > 2 || (count == 1 && cfg_.preserve_boundary)) {
        locked_[key >> 32] = 1;
        locked_[key & 0xffffffffu] = 1;
      }
    }
  }

  void neighbors(std::uint32_t v, std::vector<std::uint32_t>& out) const {
    out.clear();
    for (auto f : vertex_faces_[v]) {
      if (!face_alive_[f]) continue;
      for (auto w : faces_[f]) {
        if (w != v) out.push_back(w);
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  }

  bool has_face(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    for (auto f : vertex_faces_[x]) {
      if (face_alive_[f] && face_has(faces_[f], y) && face_has(faces_[f], z)) return true;
    }
    return false;
  }

  bool on_boundary(std::uint32_t v) const {
    std::unordered_map<std::uint32_t, int> edge_uses;
    for (auto f : vertex_faces_[v]) {
      if (!face_alive_[f]) continue;
      for (auto w : faces_[f]) {
        if (w != v) ++edge_uses[w];
      }
    }
    return std::any_of(edge_uses.begin(), edge_uses.end(), [](const auto& kv) { return kv.second == 1; });
  }

  bool collapse_allowed(std::uint32_t a, std::uint32_t b, const Vec3d& placement) {
    if (locked_[a] || locked_[b]) return false;

    neighbors(a, na_);
    neighbors(b, nb_);
    common_.clear();
    std::set_intersection(na_.begin(), na_.end(), nb_.begin(), nb_.end(), std::back_inserter(common_));

    apex_.clear();
    for (auto f : vertex_faces_[a]) {
      if (!face_alive_[f] || !face_has(faces_[f], b)) continue;
      for (auto w : faces_[f]) {
        if (w != a && w != b) apex_.push_back(w);
      }
    }
    std::sort(apex_.begin(), apex_.end());
    if (apex_.empty() || apex_.size() > 2 || apex_ != common_) return false;
    if (std::adjacent_find(apex_.begin(), apex_.end()) != apex_.end()) return false;
    if (!cfg_.preserve_boundary && apex_.size() == 2 && on_boundary(a) && on_boundary(b)) return false;

    // Two faces that would land on the same vertex triple.
    for (std::size_t i = 0; i < common_.size(); ++i) {
      for (std::size_t j = i + 1; j < common_.size(); ++j) {
        if (has_face(a, common_[i], common_[j]) && has_face(b, common_[i], common_[j])) return false;
      }
    }

    return !flips_any_face(a, b, placement) && !flips_any_face(b, a, placement);
  }

  // Faces around `moved` that survive the collapse must not turn over.
  bool flips_any_face(std::uint32_t moved, std::uint32_t other, const Vec3d& placement) const {
    for (auto f : vertex_faces_[moved]) {
      if (!face_alive_[f]) continue;
      const auto& face = faces_[f];
      if (face_has(face, other)) continue;
      const Vec3d before = face_normal(pos_[face[0]], pos_[face[1]], pos_[face[2]]);
      std::array<Vec3d, 3> p{pos_[face[0]], pos_[face[1]], pos_[face[2]]};
      for (int k = 0; k < 3; ++k) {
        if (face[k] == moved) p[k] = placement;
      }
      const Vec3d after = face_normal(p[0], p[1], p[2]);
      if (dot(before, before) == 0.0) continue;
      if (dot(after, after) == 0.0 || dot(before, after) < 0.0) return true;
    }
    return false;
  }

  void collapse(std::uint32_t a, std::uint32_t b, const Vec3d& placement) {
    pos_[a] = placement;
    quadrics_[a] += quadrics_[b];
    vertex_alive_[b] = 0;
    --alive_count_;

    for (auto f : vertex_faces_[b]) {
      if (!face_alive_[f]) continue;
      auto& face = faces_[f];
      if (face_has(face, a)) {
        face_alive_[f] = 0;
        continue;
      }
      for (auto& v : face) {
        if (v == b) v = a;
      }
      vertex_faces_[a].push_back(f);
    }
    vertex_faces_[b].clear();
    auto& fa = vertex_faces_[a];
    fa.erase(std::remove_if(fa.begin(), fa.end(), [this](std::uint32_t f) { return !face_alive_[f]; }),
             fa.end());

    // Costs change only for edges at `a`, but legality can change for every
    // edge touching a's one-ring, so all of those are restamped and re-queued.
    neighbors(a, ring_);
    ring_.push_back(a);
    for (auto v : ring_) ++version_[v];
    pushed_.clear();
    for (auto v : ring_) {
      neighbors(v, scratch_);
      for (auto w : scratch_) {
        const std::uint64_t key = v < w ? (std::uint64_t{v} << 32 | w) : (std::uint64_t{w} << 32 | v);
        if (pushed_.insert(key).second) push(v, w);
      }
    }
  }

  void push(std::uint32_t u, std::uint32_t v) {
    if (u > v) std::swap(u, v);
    if (locked_[u] || locked_[v]) return;
    const auto c = collapse_cost(quadrics_[u], quadrics_[v], pos_[u], pos_[v], cfg_);
    heap_.push({c.cost, u, v, version_[u], version_[v], c.placement});
  }

  void seed_heap() {
    std::vector<HeapEntry> entries;
    entries.reserve(faces_.size() * 3 / 2);
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(faces_.size() * 2);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& face = faces_[f];
      for (int k = 0; k < 3; ++k) {
        std::uint32_t u = face[k], v = face[(k + 1) % 3];
        if (u > v) std::swap(u, v);
        if (locked_[u] || locked_[v]) continue;
        if (!seen.insert((std::uint64_t{u} << 32) | v).second) continue;
        const auto c = collapse_cost(quadrics_[u], quadrics_[v], pos_[u], pos_[v], cfg_);
        entries.push_back({c.cost, u, v, version_[u], version_[v], c.placement});
      }
    }
    heap_ = std::priority_queue<HeapEntry, std::vector<HeapEntry>, EntryAfter>(EntryAfter{},
                                                                              std::move(entries));
  }

  SimplifyConfig cfg_;
  std::vector<Vec3d> pos_;
  std::vector<Quadric> quadrics_;
  std::vector<Face> faces_;
  std::vector<std::uint8_t> face_alive_;
  std::vector<std::uint8_t> vertex_alive_;
  std::vector<std::uint8_t> locked_;
  std::vector<std::uint32_t> version_;
  std::vector<std::vector<std::uint32_t>> vertex_faces_;
  std::priority_queue<HeapEntry, std::vector<HeapEntry>, EntryAfter> heap_;
  std::size_t alive_count_ = 0;

  // scratch buffers
  std::vector<std::uint32_t> na_, nb_, common_, apex_, ring_, scratch_;
  std::unordered_set<std::uint64_t> pushed_;
};

}  // namespace

std::vector<Quadric> compute_vertex_quadrics(const Mesh& mesh) {
  std::vector<Quadric> quadrics(mesh.vertices.size());
  for (const auto& f : mesh.faces) {
    const Vec3d p0 = to_d(mesh.vertices[f[0]]);
    const Vec3d p1 = to_d(mesh.vertices[f[1]]);
    const Vec3d p2 = to_d(mesh.vertices[f[2]]);
    const Vec3d n = face_normal(p0, p1, p2);
    const double len = std::sqrt(dot(n, n));
    if (len == 0.0) continue;
    const Vec3d unit{n[0] / len, n[1] / len, n[2] / len};
    const double area = 0.5 * len;
    const auto q = Quadric::from_plane(unit[0], unit[1], unit[2], -dot(unit, p0), area);
    for (auto v : f) quadrics[v] += q;
  }
  return quadrics;
}

CollapseCandidate collapse_cost(const Quadric& q1, const Quadric& q2, const Vec3d& v1, const Vec3d& v2,
                                const SimplifyConfig& cfg) {
  const Quadric q = q1 + q2;
  const Vec3d mid{(v1[0] + v2[0]) / 2, (v1[1] + v2[1]) / 2, (v1[2] + v2[2]) / 2};

  // Endpoint/midpoint fallback; the midpoint wins ties.
  CollapseCandidate best;
  best.placement = mid;
  best.cost = q.error(mid);
  for (const Vec3d* p : {&v1, &v2}) {
    const double e = q.error(*p);
    if (e < best.cost) {
      best.cost = e;
      best.placement = *p;
    }
  }

  if (cfg.placement_strategy == PlacementStrategy::OptimalSolve) {
    if (auto x = q.minimizer(cfg.singular_threshold)) {
      const double e = q.error(*x);
      // Rounding in an ill-conditioned solve can land above a fallback point.
      if (e <= best.cost) {
        best.cost = e;
        best.placement = *x;
      }
    }
  }
  best.cost = std::max(0.0, best.cost);
  return best;
}

SimplifyResult simplify(const Mesh& mesh, const SimplifyConfig& cfg, const CollapseObserver& observer) {
  if (cfg.target_vertices < kMinTargetVertices) {
    throw std::invalid_argument("target_vertices must be at least 4");
  }
  require_valid(mesh);

  const auto start = std::chrono::steady_clock::now();
  SimplifyResult result;
  auto& report = result.report;
  report.target_vertices = cfg.target_vertices;
  report.initial_vertices = mesh.vertices.size();
  report.initial_faces = mesh.faces.size();

  if (mesh.vertices.size() <= cfg.target_vertices) {
    result.mesh = mesh;
  } else {
    Decimator decimator(mesh, cfg);
    decimator.run(cfg.target_vertices, observer, report);
    result.mesh = decimator.extract(mesh);
  }

  report.final_vertices = result.mesh.vertices.size();
  report.final_faces = result.mesh.faces.size();
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<SimplifyReport> vertex_budget_sweep(const Mesh& mesh, std::span<const std::size_t> targets,
                                                const SimplifyConfig& base) {
  if (!std::is_sorted(targets.begin(), targets.end())) {
    throw std::invalid_argument("sweep targets must be sorted ascending");
  }
  for (auto t : targets) {
    if (t < kMinTargetVertices) throw std::invalid_argument("sweep targets must be at least 4");
  }
  require_valid(mesh);
  std::vector<SimplifyReport> reports;
  reports.reserve(targets.size());
  for (auto t : targets) {
    SimplifyConfig cfg = base;
    cfg.target_vertices = t;
    reports.push_back(simplify(mesh, cfg).report);
  }
  return reports;
}

}  // namespace mforge
