// primitives.hpp - closed and open reference meshes, outward (CCW) winding.
#pragma once

#include <cstddef>
#include <functional>

#include "mforge/mesh.hpp"

namespace mforge {

Mesh make_tetrahedron();
Mesh make_cube();
Mesh make_icosahedron();

/// Unit icosphere, `level` midpoint subdivisions: V = 10 * 4^level + 2.
Mesh make_icosphere(int level);

/// Flat (n+1)x(n+1) vertex grid in the z=0 plane spanning [0,1]^2.
Mesh make_grid(std::size_t n);

/// Moves every vertex along its direction from the origin to radius f(unit direction).
void displace_radially(Mesh& mesh, const std::function<double(double, double, double)>& radius);

}  // namespace mforge
