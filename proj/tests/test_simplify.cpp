#include <cmath>
#include <random>

#include "doctest.h"
#include "mforge/mesh.hpp"
#include "mforge/primitives.hpp"
#include "mforge/simplify.hpp"
#include "simplify_oracle.hpp"
#include "test_support.hpp"

using namespace mforge;

namespace {

std::int64_t euler(const Mesh& m) { return stats(m).euler_characteristic; }

double signed_volume(const Mesh& m) {
  double v = 0;
  for (const auto& f : m.faces) {
    const auto& a = m.vertices[f[0]];
    const auto& b = m.vertices[f[1]];
    const auto& c = m.vertices[f[2]];
    v += (double{a[0]} * (double{b[1]} * c[2] - double{b[2]} * c[1]) -
          double{a[1]} * (double{b[0]} * c[2] - double{b[2]} * c[0]) +
          double{a[2]} * (double{b[0]} * c[1] - double{b[1]} * c[0])) / 6.0;
  }
  return v;
}

Quadric random_psd(std::mt19937_64& rng, int planes) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> w(0.1, 2.0);
  Quadric q;
  for (int i = 0; i < planes; ++i) {
    double a = n(rng), b = n(rng), c = n(rng);
    const double len = std::sqrt(a * a + b * b + c * c);
    q += Quadric::from_plane(a / len, b / len, c / len, n(rng), w(rng));
  }
  return q;
}

}  // namespace

TEST_CASE("quadric: symmetric storage and plane error") {
  const auto q = Quadric::from_plane(0.0, 0.0, 1.0, -2.0);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(q.at(r, c) == q.at(c, r));
  }
  CHECK(q.error({5, -3, 2}) == 0.0);
  CHECK(q.error({0, 0, 5}) == doctest::Approx(9.0));
}

TEST_CASE("vertex quadrics: unit-area triangle in z=0 gives error d^2 at (0,0,d)") {
  Mesh m;
  m.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 1, 0}};  // area 1
  m.faces = {{0, 1, 2}};
  const auto qs = compute_vertex_quadrics(m);
  REQUIRE(qs.size() == 3);
  for (double d : {0.0, 0.5, -1.0, 3.0}) {
    for (const auto& q : qs) CHECK(q.error({0, 0, d}) == doctest::Approx(d * d).epsilon(1e-12));
  }
}

TEST_CASE("vertex quadrics: planar grid vanishes on the plane") {
  const Mesh m = make_grid(6);
  const auto qs = compute_vertex_quadrics(m);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  for (const auto& q : qs) {
    CHECK(std::abs(q.error({u(rng), u(rng), 0.0})) < 1e-12);
    CHECK(q.error({0, 0, 1}) > 0);
  }
}

TEST_CASE("vertex quadrics: cube vertices have zero error at their own position") {
  const Mesh m = make_cube();
  const auto qs = compute_vertex_quadrics(m);
  for (std::size_t v = 0; v < m.vertices.size(); ++v) {
    const auto& p = m.vertices[v];
    CHECK(std::abs(qs[v].error({p[0], p[1], p[2]})) < 1e-12);
  }
}

TEST_CASE("quadric: sums of plane quadrics are PSD up to rounding") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    const auto q = random_psd(rng, 1 + i % 5);
    CHECK(q.error({n(rng), n(rng), n(rng)}) >= -1e-9);
  }
}

TEST_CASE("collapse_cost: zero quadrics fall back to the midpoint") {
  SimplifyConfig cfg;
  const auto c = collapse_cost(Quadric{}, Quadric{}, {0, 0, 0}, {2, 4, 6}, cfg);
  CHECK(c.cost == 0.0);
  CHECK(c.placement == Vec3d{1, 2, 3});
}

TEST_CASE("collapse_cost: coplanar quadrics are rank deficient and stay on the plane") {
  SimplifyConfig cfg;
  const auto q1 = Quadric::from_plane(0, 0, 1, -1, 0.7);
  const auto q2 = Quadric::from_plane(0, 0, 1, -1, 1.3);
  CHECK(std::abs((q1 + q2).determinant3()) <= cfg.singular_threshold);
  const auto c = collapse_cost(q1, q2, {0, 0, 1}, {3, -1, 1}, cfg);
  CHECK(c.cost == 0.0);
  CHECK(c.placement[2] == doctest::Approx(1.0));
}

TEST_CASE("collapse_cost: never worse than the endpoint/midpoint oracle") {
  SimplifyConfig cfg;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const auto q1 = random_psd(rng, 1 + i % 4);
    const auto q2 = random_psd(rng, 1 + (i / 4) % 4);
    const Vec3d v1{n(rng), n(rng), n(rng)}, v2{n(rng), n(rng), n(rng)};
    const Vec3d mid{(v1[0] + v2[0]) / 2, (v1[1] + v2[1]) / 2, (v1[2] + v2[2]) / 2};
    const Quadric q = q1 + q2;
    const double oracle = std::min({q.error(v1), q.error(v2), q.error(mid)});
    const auto c = collapse_cost(q1, q2, v1, v2, cfg);
    CHECK(c.cost >= 0.0);
    CHECK(c.cost <= oracle + 1e-9 * (1.0 + std::abs(oracle)));
    CHECK(c.cost == doctest::Approx(std::max(0.0, q.error(c.placement))).epsilon(1e-9));
    if (std::abs(q.determinant3()) > cfg.singular_threshold) {
      // At the minimizer the gradient of the quadratic form vanishes.
      const auto x = q.minimizer(cfg.singular_threshold);
      REQUIRE(x);
      for (int r = 0; r < 3; ++r) {
        const double g = q.at(r, 0) * (*x)[0] + q.at(r, 1) * (*x)[1] + q.at(r, 2) * (*x)[2] + q.at(r, 3);
        CHECK(std::abs(g) < 1e-7);
      }
    }
  }
}

TEST_CASE("collapse_cost: midpoint strategy never solves") {
  SimplifyConfig cfg;
  cfg.placement_strategy = PlacementStrategy::MidpointFallback;
  std::mt19937_64 rng(9);
  const auto q1 = random_psd(rng, 4), q2 = random_psd(rng, 4);
  const Vec3d v1{0, 0, 0}, v2{1, 1, 1}, mid{0.5, 0.5, 0.5};
  const auto c = collapse_cost(q1, q2, v1, v2, cfg);
  CHECK((c.placement == v1 || c.placement == v2 || c.placement == mid));
}

TEST_CASE("simplify: rejects small targets and invalid meshes") {
  SimplifyConfig cfg;
  cfg.target_vertices = 3;
  CHECK_THROWS_AS(simplify(make_icosphere(1), cfg), std::invalid_argument);
  Mesh bad = make_tetrahedron();
  bad.faces[0][0] = 9;
  CHECK_THROWS_AS(simplify(bad, SimplifyConfig{}), ValidationError);
}

TEST_CASE("simplify: mesh under budget is returned unchanged") {
  const Mesh m = make_icosphere(3);  // 642 vertices
  const auto r = simplify(m, SimplifyConfig{});
  CHECK(r.mesh == m);
  CHECK(r.report.collapses == 0);
  CHECK(r.report.final_vertices == 642);

  std::mt19937_64 rng(2);
  const Mesh grid = testing::random_open_mesh(rng, 29);  // 900 vertices
  REQUIRE(grid.vertices.size() == 900);
  const auto g = simplify(grid, SimplifyConfig{});
  CHECK(g.mesh == grid);
  CHECK(g.report.collapses == 0);
}

TEST_CASE("simplify: icosphere 2562 -> 1000 keeps Euler characteristic") {
  const Mesh m = make_icosphere(4);
  REQUIRE(m.vertices.size() == 2562);
  const auto r = simplify(m, SimplifyConfig{});
  CHECK(validate(r.mesh).ok());
  CHECK(r.mesh.vertices.size() == 1000);
  CHECK(r.mesh.faces.size() == 1996);
  CHECK(euler(r.mesh) == 2);
  CHECK(is_closed(r.mesh));
  CHECK(r.report.collapses == 1562);
  CHECK_FALSE(r.report.guard_blocked);
  CHECK(signed_volume(r.mesh) > 0);
  // Geometry stays on the sphere.
  for (const auto& p : r.mesh.vertices) {
    const double rad = std::sqrt(double{p[0]} * p[0] + double{p[1]} * p[1] + double{p[2]} * p[2]);
    CHECK(std::abs(rad - 1.0) < 0.02);
  }
}

TEST_CASE("simplify: dense 13,944-vertex closed mesh -> 1000 vertices, 1996 faces") {
  std::mt19937_64 rng(13944);
  SimplifyConfig to_dense;
  to_dense.target_vertices = 13944;
  const Mesh dense = simplify(testing::random_closed_mesh(rng, 6), to_dense).mesh;
  REQUIRE(dense.vertices.size() == 13944);
  REQUIRE(dense.faces.size() == 27884);

  const auto r = simplify(dense, SimplifyConfig{});
  CHECK(r.mesh.vertices.size() == 1000);
  CHECK(r.mesh.faces.size() == 1996);
  CHECK(euler(r.mesh) == 2);
  CHECK(validate(r.mesh).ok());
  CHECK(r.report.initial_vertices == 13944);
  CHECK(r.report.initial_faces == 27884);
}

TEST_CASE("simplify: deterministic") {
  std::mt19937_64 rng(77);
  const Mesh m = testing::random_closed_mesh(rng, 3);
  SimplifyConfig cfg;
  cfg.target_vertices = 100;
  const auto a = simplify(m, cfg);
  const auto b = simplify(m, cfg);
  CHECK(a.mesh == b.mesh);
  CHECK(a.report.total_error == b.report.total_error);
}

TEST_CASE("simplify: open meshes keep their boundary when asked") {
  std::mt19937_64 rng(4);
  const Mesh m = testing::random_open_mesh(rng, 12);  // 169 vertices, 48 on the boundary
  const auto boundary = boundary_vertices(m);
  std::size_t frozen = std::count(boundary.begin(), boundary.end(), true);
  REQUIRE(frozen == 48);

  SimplifyConfig cfg;
  cfg.target_vertices = 10;  // below what the frozen boundary allows
  const auto r = simplify(m, cfg);
  CHECK(r.report.guard_blocked);
  CHECK(r.mesh.vertices.size() <= std::max(cfg.target_vertices, frozen + 40));
  CHECK(r.mesh.vertices.size() >= frozen);
  CHECK(validate(r.mesh).ok());
  CHECK(euler(r.mesh) == 1);
  // Every original boundary position survives.
  std::set<Point3> out(r.mesh.vertices.begin(), r.mesh.vertices.end());
  for (std::size_t v = 0; v < m.vertices.size(); ++v) {
    if (boundary[v]) CHECK(out.count(m.vertices[v]) == 1);
  }

  cfg.preserve_boundary = false;
  cfg.target_vertices = 20;
  const auto loose = simplify(m, cfg);
  CHECK(validate(loose.mesh).ok());
  CHECK(loose.mesh.vertices.size() == 20);
  CHECK(euler(loose.mesh) == 1);
}

TEST_CASE("simplify: output faces only reference output vertices, error accumulates monotonically") {
  std::mt19937_64 rng(8);
  const Mesh m = testing::random_closed_mesh(rng, 3);
  SimplifyConfig cfg;
  cfg.target_vertices = 50;
  double running = 0.0;
  bool monotone = true;
  const auto r = simplify(m, cfg, [&](const SimplifyState&, const CollapseCandidate& c) {
    monotone &= c.cost >= 0.0;
    running += c.cost;
  });
  CHECK(monotone);
  CHECK(running == doctest::Approx(r.report.total_error));
  for (const auto& f : r.mesh.faces) {
    for (auto v : f) CHECK(v < r.mesh.vertices.size());
  }
}

TEST_CASE("simplify: greedy order matches the exhaustive re-costing oracle on small meshes") {
  std::mt19937_64 rng(2024);
  std::size_t meshes = 0;
  for (int i = 0; i < 24; ++i) {
    Mesh m;
    if (i % 3 == 0) {
      m = testing::random_closed_mesh(rng, 1);  // 42 vertices
    } else if (i % 3 == 1) {
      SimplifyConfig pre;
      pre.target_vertices = 60 + (i * 7) % 40;
      m = simplify(testing::random_closed_mesh(rng, 2), pre).mesh;
    } else {
      m = testing::random_open_mesh(rng, 4 + i % 5);
    }
    REQUIRE(m.vertices.size() <= 100);
    for (bool keep_boundary : {true, false}) {
      SimplifyConfig cfg;
      cfg.preserve_boundary = keep_boundary;
      cfg.target_vertices = 4 + static_cast<std::size_t>(i % 6);
      testing::GreedyOracle oracle(m, cfg);
      const auto r = simplify(m, cfg, [&](const SimplifyState& s, const CollapseCandidate& c) { oracle.check(s, c); });
      CHECK(oracle.steps() == r.report.collapses);
      CHECK(oracle.normal_flips() == 0);
      for (const auto& f : oracle.failures()) FAIL_CHECK(f);
      CHECK(validate(r.mesh).ok());
      if (is_closed(m)) CHECK(euler(r.mesh) == 2);
      ++meshes;
    }
  }
  CHECK(meshes == 48);
}

TEST_CASE("vertex_budget_sweep: error is non-increasing in the target") {
  std::mt19937_64 rng(500);
  const Mesh m = testing::random_closed_mesh(rng, 5);  // 10242 vertices
  const std::vector<std::size_t> targets{500, 800, 1000, 1500, 2000};
  const auto reports = vertex_budget_sweep(m, targets);
  REQUIRE(reports.size() == 5);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    CHECK(reports[i].target_vertices == targets[i]);
    CHECK(reports[i].final_vertices == targets[i]);
    CHECK(reports[i].final_faces == 2 * targets[i] - 4);
  }
  for (std::size_t i = 1; i < reports.size(); ++i) CHECK(reports[i - 1].total_error >= reports[i].total_error);
}

TEST_CASE("vertex_budget_sweep: trivial and repeated targets") {
  const Mesh m = make_icosphere(2);
  const std::vector<std::size_t> same{m.vertices.size()};
  const auto r = vertex_budget_sweep(m, same);
  REQUIRE(r.size() == 1);
  CHECK(r[0].collapses == 0);

  const std::vector<std::size_t> twice{50, 50};
  const auto t = vertex_budget_sweep(m, twice);
  CHECK(t[0].total_error == t[1].total_error);
  CHECK(t[0].collapses == t[1].collapses);
  CHECK(t[0].final_faces == t[1].final_faces);

  const std::vector<std::size_t> unsorted{100, 50};
  CHECK_THROWS_AS(vertex_budget_sweep(m, unsorted), std::invalid_argument);
  const std::vector<std::size_t> tiny{3};
  CHECK_THROWS_AS(vertex_budget_sweep(m, tiny), std::invalid_argument);
}
