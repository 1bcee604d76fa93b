// Shared helpers for the test suites: random mesh generators and oracles.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mforge/mesh.hpp"
#include "mforge/primitives.hpp"

namespace mforge::testing {

/// Edge count by checking every vertex pair against every face.
inline std::size_t brute_force_edge_count(const Mesh& m) {
  std::size_t edges = 0;
  for (std::uint32_t i = 0; i < m.vertices.size(); ++i) {
    for (std::uint32_t j = i + 1; j < m.vertices.size(); ++j) {
      for (const auto& f : m.faces) {
        const bool has_i = f[0] == i || f[1] == i || f[2] == i;
        const bool has_j = f[0] == j || f[1] == j || f[2] == j;
        if (has_i && has_j) {
          ++edges;
          break;
        }
      }
    }
  }
  return edges;
}

/// Relabels vertices with a random permutation; topology and winding unchanged.
inline Mesh shuffle_vertices(const Mesh& in, std::mt19937_64& rng) {
  std::vector<std::uint32_t> perm(in.vertices.size());
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mesh out;
  out.vertices.resize(in.vertices.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out.vertices[perm[i]] = in.vertices[i];
  for (auto f : in.faces) out.faces.push_back({perm[f[0]], perm[f[1]], perm[f[2]]});
  return out;
}

/// Closed genus-0 mesh: icosphere with random radial bumps and random labels.
inline Mesh random_closed_mesh(std::mt19937_64& rng, int level) {
  Mesh m = make_icosphere(level);
  std::uniform_real_distribution<double> amp(0.0, 0.25), freq(1.0, 4.0), phase(0.0, 6.28);
  const double a1 = amp(rng), a2 = amp(rng), f1 = freq(rng), f2 = freq(rng), p1 = phase(rng),
               p2 = phase(rng);
  displace_radially(m, [&](double x, double y, double z) {
    return 1.0 + a1 * std::sin(f1 * x + p1) * std::cos(f2 * y) + a2 * std::sin(f2 * z + p2);
  });
  return shuffle_vertices(m, rng);
}

/// Open mesh: grid with random height field.
inline Mesh random_open_mesh(std::mt19937_64& rng, std::size_t n) {
  Mesh m = make_grid(n);
  std::uniform_real_distribution<float> h(-0.1f, 0.1f);
  for (auto& p : m.vertices) p[2] = h(rng);
  return shuffle_vertices(m, rng);
}

// Random text over a vocabulary that exercises every branch of the grammar.
inline std::string fuzz_suggestion_text(std::mt19937& rng) {
  static const std::vector<std::string> kTokens = {
      "Potted Plant", "Green", "Square", "Floor", " - ", " - ", ", ", ",", "; ", "|", "Name:", "name :", "Color:",
      "colour:", "Shape:", "Location:", "LOCATION:", "1. ", "2) ", "(3) ", "- ", "* ", "+ ", "\xE2\x80\xA2 ", "**",
      "\xE2\x80\x93", "\xE2\x80\x94", "\n", "\n", "\r\n", "\t", " ", "  ", ":", "-", "12.5", "a", "lamp", "x",
      "\xC3\xA9", "\xFF", std::string(1, '\0'), "Here are some ideas:", "Office", "\"", "\\"};
  std::uniform_int_distribution<std::size_t> pick(0, kTokens.size() - 1), len(0, 40), byte(0, 255);
  std::string s;
  const auto n = len(rng);
  for (std::size_t i = 0; i < n; ++i) {
    if (rng() % 17 == 0) {
      s.push_back(static_cast<char>(byte(rng)));
    } else {
      s += kTokens[pick(rng)];
    }
  }
  return s;
}

}  // namespace mforge::testing
