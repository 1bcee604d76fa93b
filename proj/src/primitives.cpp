#include "mforge/primitives.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace mforge {

Mesh make_tetrahedron() {
  Mesh m;
  m.vertices = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  m.faces = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return m;
}

Mesh make_cube() {
  Mesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  m.faces = {
      {0, 2, 1}, {0, 3, 2},  // z = 0
      {4, 5, 6}, {4, 6, 7},  // z = 1
      {0, 1, 5}, {0, 5, 4},  // y = 0
      {3, 6, 2}, {3, 7, 6},  // y = 1
      {0, 4, 7}, {0, 7, 3},  // x = 0
      {1, 2, 6}, {1, 6, 5},  // x = 1
  };
  return m;
}

Mesh make_icosahedron() {
  const float t = static_cast<float>((1.0 + std::sqrt(5.0)) / 2.0);
  Mesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  m.faces = {{0, 11, 5}, {0, 5, 1},   {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
             {1, 5, 9},  {5, 11, 4},  {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
             {3, 9, 4},  {3, 4, 2},   {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
             {4, 9, 5},  {2, 4, 11},  {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  return m;
}

Mesh make_icosphere(int level) {
  if (level < 0 || level > 8) throw std::invalid_argument("icosphere level must be in [0, 8]");
  Mesh m = make_icosahedron();
  std::vector<std::array<double, 3>> pos;
  pos.reserve(m.vertices.size());
  for (const auto& p : m.vertices) {
    const double len = std::sqrt(double{p[0]} * p[0] + double{p[1]} * p[1] + double{p[2]} * p[2]);
    pos.push_back({p[0] / len, p[1] / len, p[2] / len});
  }
  for (int l = 0; l < level; ++l) {
    std::unordered_map<std::uint64_t, std::uint32_t> midpoints;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const std::uint64_t key = a < b ? (std::uint64_t{a} << 32 | b) : (std::uint64_t{b} << 32 | a);
      auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      std::array<double, 3> mid{(pos[a][0] + pos[b][0]) / 2, (pos[a][1] + pos[b][1]) / 2,
                                (pos[a][2] + pos[b][2]) / 2};
      const double len = std::sqrt(mid[0] * mid[0] + mid[1] * mid[1] + mid[2] * mid[2]);
      for (auto& c : mid) c /= len;
      const auto idx = static_cast<std::uint32_t>(pos.size());
      pos.push_back(mid);
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<Face> next;
    next.reserve(m.faces.size() * 4);
    for (const auto& f : m.faces) {
      const auto ab = midpoint(f[0], f[1]);
      const auto bc = midpoint(f[1], f[2]);
      const auto ca = midpoint(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.faces = std::move(next);
  }
  m.vertices.clear();
  m.vertices.reserve(pos.size());
  for (const auto& p : pos) {
    m.vertices.push_back({static_cast<float>(p[0]), static_cast<float>(p[1]), static_cast<float>(p[2])});
  }
  return m;
}

Mesh make_grid(std::size_t n) {
  if (n == 0) throw std::invalid_argument("grid needs at least one cell");
  Mesh m;
  const auto row = static_cast<std::uint32_t>(n + 1);
  for (std::size_t j = 0; j <= n; ++j) {
    for (std::size_t i = 0; i <= n; ++i) {
      m.vertices.push_back({static_cast<float>(static_cast<double>(i) / n),
                            static_cast<float>(static_cast<double>(j) / n), 0.0f});
    }
  }
  for (std::uint32_t j = 0; j < n; ++j) {
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t v00 = j * row + i, v10 = v00 + 1, v01 = v00 + row, v11 = v01 + 1;
      m.faces.push_back({v00, v10, v11});
      m.faces.push_back({v00, v11, v01});
    }
  }
  return m;
}

void displace_radially(Mesh& mesh, const std::function<double(double, double, double)>& radius) {
  for (auto& p : mesh.vertices) {
    const double x = p[0], y = p[1], z = p[2];
    const double len = std::sqrt(x * x + y * y + z * z);
    if (len == 0.0) continue;
    const double r = radius(x / len, y / len, z / len);
    p = {static_cast<float>(x / len * r), static_cast<float>(y / len * r), static_cast<float>(z / len * r)};
  }
}

}  // namespace mforge
