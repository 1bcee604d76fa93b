// Exhaustive re-costing oracle for the greedy collapse order.
//
// At every collapse the simplifier reports its working state. The oracle
// enumerates all live edges by brute force, re-evaluates each one, applies its
// own implementation of the boundary / link-condition / orientation guards and
// checks that the executed collapse is the cheapest legal one.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mforge/mesh.hpp"
#include "mforge/simplify.hpp"

namespace mforge::testing {

class GreedyOracle {
 public:
  GreedyOracle(const Mesh& input, const SimplifyConfig& cfg) : cfg_(cfg) {
    const auto boundary = boundary_vertices(input);
    frozen_.assign(boundary.size(), 0);
    if (cfg.preserve_boundary) {
      for (std::size_t v = 0; v < boundary.size(); ++v) frozen_[v] = boundary[v] ? 1 : 0;
    }
  }

  void check(const SimplifyState& state, const CollapseCandidate& chosen) {
    ++steps_;
    std::vector<Face> live;
    for (std::size_t f = 0; f < state.faces.size(); ++f) {
      if (state.face_alive[f]) live.push_back(state.faces[f]);
    }
    std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
    for (const auto& f : live) {
      for (int k = 0; k < 3; ++k) {
        auto a = f[k], b = f[(k + 1) % 3];
        edges.insert({std::min(a, b), std::max(a, b)});
      }
    }

    std::optional<CollapseCandidate> best;
    for (auto [a, b] : edges) {
      auto c = collapse_cost(state.quadrics[a], state.quadrics[b], state.positions[a], state.positions[b], cfg_);
      c.edge = {a, b};
      if (!legal(state, live, a, b, c.placement)) continue;
      if (!best || c.cost < best->cost ||
          (c.cost == best->cost && std::pair(a, b) < std::pair(best->edge.a, best->edge.b))) {
        best = c;
      }
    }
    if (!best) {
      failures_.push_back("step " + std::to_string(steps_) + ": collapse executed but oracle finds none legal");
      return;
    }
    if (best->edge != chosen.edge || best->cost != chosen.cost) {
      failures_.push_back("step " + std::to_string(steps_) + ": executed (" + std::to_string(chosen.edge.a) +
                          "," + std::to_string(chosen.edge.b) + ") cost " + std::to_string(chosen.cost) +
                          ", oracle (" + std::to_string(best->edge.a) + "," + std::to_string(best->edge.b) +
                          ") cost " + std::to_string(best->cost));
    }
    if (!legal(state, live, chosen.edge.a, chosen.edge.b, chosen.placement)) {
      failures_.push_back("step " + std::to_string(steps_) + ": executed collapse violates a guard");
    }
    if (flips(state, live, chosen.edge.a, chosen.edge.b, chosen.placement)) ++flips_;
  }

  const std::vector<std::string>& failures() const { return failures_; }
  std::size_t steps() const { return steps_; }
  std::size_t normal_flips() const { return flips_; }

 private:
  static bool contains(const Face& f, std::uint32_t v) { return f[0] == v || f[1] == v || f[2] == v; }

  static std::set<std::uint32_t> neighbours(const std::vector<Face>& live, std::uint32_t v) {
    std::set<std::uint32_t> out;
    for (const auto& f : live) {
      if (!contains(f, v)) continue;
      for (auto w : f) {
        if (w != v) out.insert(w);
      }
    }
    return out;
  }

  static bool boundary_now(const std::vector<Face>& live, std::uint32_t v) {
    std::map<std::uint32_t, int> uses;
    for (const auto& f : live) {
      if (!contains(f, v)) continue;
      for (auto w : f) {
        if (w != v) ++uses[w];
      }
    }
    for (auto [w, n] : uses) {
      if (n == 1) return true;
    }
    return false;
  }

  static Vec3d normal(const Vec3d& p, const Vec3d& q, const Vec3d& r) {
    const Vec3d u{q[0] - p[0], q[1] - p[1], q[2] - p[2]};
    const Vec3d w{r[0] - p[0], r[1] - p[1], r[2] - p[2]};
    return {u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]};
  }

  static bool flips(const SimplifyState& s, const std::vector<Face>& live, std::uint32_t a, std::uint32_t b,
                    const Vec3d& placement) {
    for (const auto& f : live) {
      const bool ha = contains(f, a), hb = contains(f, b);
      if (ha == hb) continue;  // untouched, or removed by the collapse
      std::array<Vec3d, 3> p{s.positions[f[0]], s.positions[f[1]], s.positions[f[2]]};
      const Vec3d before = normal(p[0], p[1], p[2]);
      for (int k = 0; k < 3; ++k) {
        if (f[k] == a || f[k] == b) p[k] = placement;
      }
      const Vec3d after = normal(p[0], p[1], p[2]);
      const double bb = before[0] * before[0] + before[1] * before[1] + before[2] * before[2];
      const double aa = after[0] * after[0] + after[1] * after[1] + after[2] * after[2];
      const double ab = before[0] * after[0] + before[1] * after[1] + before[2] * after[2];
      if (bb == 0.0) continue;
      if (aa == 0.0 || ab < 0.0) return true;
    }
    return false;
  }

  bool legal(const SimplifyState& s, const std::vector<Face>& live, std::uint32_t a, std::uint32_t b,
             const Vec3d& placement) const {
    if (frozen_[a] || frozen_[b]) return false;
    const auto na = neighbours(live, a), nb = neighbours(live, b);
    std::set<std::uint32_t> common;
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::inserter(common, common.end()));
    std::multiset<std::uint32_t> apexes;
    for (const auto& f : live) {
      if (contains(f, a) && contains(f, b)) {
        for (auto w : f) {
          if (w != a && w != b) apexes.insert(w);
        }
      }
    }
    if (apexes.empty() || apexes.size() > 2) return false;
    if (std::set<std::uint32_t>(apexes.begin(), apexes.end()).size() != apexes.size()) return false;
    if (!std::equal(common.begin(), common.end(), apexes.begin(), apexes.end())) return false;
    if (!cfg_.preserve_boundary && apexes.size() == 2 && boundary_now(live, a) && boundary_now(live, b)) {
      return false;
    }
    // Collapse must not merge two faces into one vertex triple.
    std::set<std::array<std::uint32_t, 3>> after;
    for (auto f : live) {
      if (contains(f, a) && contains(f, b)) continue;
      for (auto& v : f) {
        if (v == b) v = a;
      }
      std::array<std::uint32_t, 3> key{f[0], f[1], f[2]};
      std::sort(key.begin(), key.end());
      if (!after.insert(key).second) return false;
    }
    return !flips(s, live, a, b, placement);
  }

  SimplifyConfig cfg_;
  std::vector<std::uint8_t> frozen_;
  std::vector<std::string> failures_;
  std::size_t steps_ = 0;
  std::size_t flips_ = 0;
};

}  // namespace mforge::testing
