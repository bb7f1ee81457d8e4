#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <queue>
#include <random>
#include <set>

#include "doctest.h"
#include "prepline/error.hpp"
#include "prepline/mesh.hpp"
#include "prepline/mesh_io.hpp"
#include "prepline/spatial.hpp"
#include "prepline/synth.hpp"

using namespace prepline;

namespace {

TriangleMesh drop_face(const TriangleMesh& mesh, int f) {
  std::vector<Face> faces = mesh.faces();
  faces.erase(faces.begin() + f);
  return TriangleMesh(mesh.vertices(), faces);
}

ErrorKind kind_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kInternal;
}

std::size_t unique_edges(const TriangleMesh& mesh) {
  std::set<std::pair<int, int>> edges;
  for (const Face& t : mesh.faces()) {
    for (int k = 0; k < 3; ++k) {
      const int a = t[static_cast<std::size_t>(k)];
      const int b = t[static_cast<std::size_t>((k + 1) % 3)];
      edges.emplace(std::min(a, b), std::max(a, b));
    }
  }
  return edges.size();
}

}  // namespace

TEST_CASE("binary STL cube welds to 8 vertices") {
  const TriangleMesh cube = synth::box(Vec3(1, 1, 1));
  const std::string bytes = to_stl_binary(cube);
  CHECK(bytes.size() == 84 + 50 * 12);
  const LoadedMesh loaded = parse_mesh(bytes, MeshFormat::kStlBinary);
  CHECK(loaded.mesh.num_vertices() == 8);
  CHECK(loaded.mesh.num_faces() == 12);
}

TEST_CASE("truncated ASCII STL reports the line") {
  const std::string text =
      "solid t\n"
      " facet normal 0 0 1\n"
      "  outer loop\n"
      "   vertex 0 0 0\n"
      "   vertex 1 0 0\n"
      "   vertex 0 1 0\n"
      "  endloop\n"
      " endfacet\n"
      " facet normal 0 0 1\n"
      "  outer loop\n"
      "   vertex 0 0 0\n";
  try {
    parse_mesh(text, MeshFormat::kStlAscii);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParse);
    CHECK(std::string(e.what()).find("line 9") != std::string::npos);
  }
}

TEST_CASE("truncated binary STL names a byte offset") {
  std::string bytes = to_stl_binary(synth::box(Vec3(1, 1, 1)));
  bytes.resize(bytes.size() - 10);
  try {
    parse_mesh(bytes, MeshFormat::kStlBinary);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParse);
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
}

TEST_CASE("zero-face STL is an empty-mesh error") {
  CHECK(kind_of([] { parse_mesh(std::string("solid e\nendsolid e\n"), MeshFormat::kStlAscii); }) ==
        ErrorKind::kEmptyMesh);
}

TEST_CASE("icosphere with 1280 faces has Euler characteristic 2") {
  const TriangleMesh sphere = synth::icosphere(3, 1.0);
  REQUIRE(sphere.num_faces() == 1280);
  const LoadedMesh loaded = parse_mesh(to_stl_binary(sphere), MeshFormat::kStlBinary);
  const auto v = static_cast<long>(loaded.mesh.num_vertices());
  const auto e = static_cast<long>(unique_edges(loaded.mesh));
  const auto f = static_cast<long>(loaded.mesh.num_faces());
  CHECK(v == 642);
  CHECK(f == 1280);
  CHECK(v - e + f == 2);
}

TEST_CASE("save and load round-trip in every format") {
  const TriangleMesh sphere = synth::icosphere(2, 3.0);
  std::vector<int> labels(sphere.num_faces());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
  for (MeshFormat fmt : {MeshFormat::kStlBinary, MeshFormat::kStlAscii, MeshFormat::kPly}) {
    CAPTURE(static_cast<int>(fmt));
    std::string bytes;
    if (fmt == MeshFormat::kStlBinary) bytes = to_stl_binary(sphere);
    if (fmt == MeshFormat::kStlAscii) bytes = to_stl_ascii(sphere);
    if (fmt == MeshFormat::kPly) bytes = to_ply(sphere, labels);
    const LoadedMesh loaded = parse_mesh(bytes, fmt);
    REQUIRE(loaded.mesh.num_faces() == sphere.num_faces());
    REQUIRE(loaded.mesh.num_vertices() == sphere.num_vertices());
    for (std::size_t f = 0; f < sphere.num_faces(); ++f) {
      for (int k = 0; k < 3; ++k) {
        const Vec3& a = sphere.vertex(sphere.face(static_cast<int>(f))[static_cast<std::size_t>(k)]);
        const Vec3& b = loaded.mesh.vertex(loaded.mesh.face(static_cast<int>(f))[static_cast<std::size_t>(k)]);
        CHECK((a - b).norm() <= 1e-6);
      }
    }
    if (fmt == MeshFormat::kPly) {
      REQUIRE(loaded.labels.has_value());
      CHECK(*loaded.labels == labels);
    }
  }
}

TEST_CASE("non-manifold edge is a topology error") {
  std::vector<Vec3> v{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}};
  std::vector<Face> f{{0, 1, 2}, {1, 0, 3}, {0, 1, 4}};
  const TriangleMesh mesh(v, f);
  CHECK(kind_of([&] { FaceAdjacency adj(mesh); }) == ErrorKind::kTopology);
  CHECK(kind_of([&] { parse_mesh(to_stl_binary(mesh), MeshFormat::kStlBinary); }) == ErrorKind::kTopology);
}

TEST_CASE("invalid faces are rejected") {
  CHECK(kind_of([] { TriangleMesh({{0, 0, 0}, {1, 0, 0}}, {{0, 1, 2}}); }) == ErrorKind::kTopology);
  CHECK(kind_of([] { TriangleMesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 1}}); }) == ErrorKind::kTopology);
  CHECK(kind_of([] { TriangleMesh({{0, 0, 0}}, {}); }) == ErrorKind::kEmptyMesh);
}

TEST_CASE("derived face quantities") {
  const TriangleMesh sphere = synth::icosphere(2, 2.0);
  for (std::size_t f = 0; f < sphere.num_faces(); ++f) {
    const Face& t = sphere.face(static_cast<int>(f));
    CHECK(std::abs(sphere.face_normal(static_cast<int>(f)).norm() - 1.0) <= 1e-9);
    const Vec3 mean = (sphere.vertex(t[0]) + sphere.vertex(t[1]) + sphere.vertex(t[2])) / 3.0;
    CHECK((sphere.barycenter(static_cast<int>(f)) - mean).norm() <= 1e-15);
  }
}

TEST_CASE("boundary loops") {
  SUBCASE("closed icosphere") { CHECK(extract_boundary_loops(synth::icosphere(2)).empty()); }
  SUBCASE("one face removed") {
    const auto loops = extract_boundary_loops(drop_face(synth::icosphere(2), 7));
    REQUIRE(loops.size() == 1);
    CHECK(loops[0].vertices.size() == 3);
  }
  SUBCASE("open cylinder") {
    const int segments = 24;
    const TriangleMesh cyl = synth::cylinder(segments, 6, 2.0, 3.0);
    const auto loops = extract_boundary_loops(cyl);
    REQUIRE(loops.size() == 2);
    for (const auto& loop : loops) {
      CHECK(loop.vertices.size() == segments);
      const double expected = segments * 2.0 * 2.0 * std::sin(std::numbers::pi / segments);
      CHECK(loop.length == doctest::Approx(expected).epsilon(1e-9));
    }
  }
}

TEST_CASE("boundary loop edges are exactly the single-face edges") {
  const TriangleMesh mesh = drop_face(drop_face(synth::cylinder(16, 5, 1.0, 2.0), 30), 3);
  std::map<std::pair<int, int>, int> count;
  for (const Face& t : mesh.faces()) {
    for (int k = 0; k < 3; ++k) {
      const int a = t[static_cast<std::size_t>(k)];
      const int b = t[static_cast<std::size_t>((k + 1) % 3)];
      ++count[{std::min(a, b), std::max(a, b)}];
    }
  }
  std::multiset<std::pair<int, int>> expected;
  for (const auto& [e, n] : count) {
    if (n == 1) expected.insert(e);
  }
  std::multiset<std::pair<int, int>> got;
  for (const auto& loop : extract_boundary_loops(mesh)) {
    for (std::size_t i = 0; i < loop.vertices.size(); ++i) {
      const int a = loop.vertices[i];
      const int b = loop.vertices[(i + 1) % loop.vertices.size()];
      got.insert({std::min(a, b), std::max(a, b)});
    }
  }
  CHECK(got == expected);
}

TEST_CASE("face adjacency is symmetric") {
  const TriangleMesh mesh = synth::cylinder(12, 4, 1.0, 1.0);
  const FaceAdjacency adj(mesh);
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    for (int g : adj.neighbors(static_cast<int>(f))) {
      const auto back = adj.neighbors(g);
      CHECK(std::find(back.begin(), back.end(), static_cast<int>(f)) != back.end());
    }
  }
}

TEST_CASE("connected components") {
  SUBCASE("connected mesh") {
    const TriangleMesh sphere = synth::icosphere(1);
    std::vector<int> all(sphere.num_faces());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const auto comps = connected_components(all, FaceAdjacency(sphere));
    REQUIRE(comps.size() == 1);
    CHECK(comps[0].size() == sphere.num_faces());
  }
  SUBCASE("two disjoint triangles") {
    const TriangleMesh two({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {6, 0, 0}, {5, 1, 0}},
                           {{0, 1, 2}, {3, 4, 5}});
    const std::vector<int> all{0, 1};
    const auto comps = connected_components(all, FaceAdjacency(two));
    REQUIRE(comps.size() == 2);
    CHECK(comps[0].size() == 1);
    CHECK(comps[1].size() == 1);
  }
  SUBCASE("empty subset") { CHECK(connected_components({}, FaceAdjacency(synth::icosphere(0))).empty()); }
  SUBCASE("icosphere minus an equatorial ring") {
    const TriangleMesh sphere = synth::icosphere(3);
    const FaceAdjacency adj(sphere);
    std::vector<int> kept;
    std::vector<char> in_subset(sphere.num_faces(), 0);
    for (std::size_t f = 0; f < sphere.num_faces(); ++f) {
      const Face& t = sphere.face(static_cast<int>(f));
      double lo = 1e9;
      double hi = -1e9;
      for (int v : t) {
        lo = std::min(lo, sphere.vertex(v).z());
        hi = std::max(hi, sphere.vertex(v).z());
      }
      const bool ring = lo <= 0.0 && hi >= 0.0;
      if (!ring) {
        kept.push_back(static_cast<int>(f));
        in_subset[f] = 1;
      }
    }
    const auto comps = connected_components(kept, adj);
    REQUIRE(comps.size() == 2);
    // Independent BFS from the first kept face.
    std::vector<char> seen(sphere.num_faces(), 0);
    std::queue<int> q;
    q.push(kept[0]);
    seen[static_cast<std::size_t>(kept[0])] = 1;
    std::size_t reached = 0;
    while (!q.empty()) {
      const int f = q.front();
      q.pop();
      ++reached;
      for (int g : adj.neighbors(f)) {
        if (in_subset[static_cast<std::size_t>(g)] && !seen[static_cast<std::size_t>(g)]) {
          seen[static_cast<std::size_t>(g)] = 1;
          q.push(g);
        }
      }
    }
    CHECK((reached == comps[0].size() || reached == comps[1].size()));
    CHECK(comps[0].size() + comps[1].size() == kept.size());
    for (const auto& c : comps) {
      const double z = sphere.barycenter(c[0]).z();
      for (int f : c) CHECK((sphere.barycenter(f).z() > 0) == (z > 0));
    }
  }
}

TEST_CASE("closest point on surface") {
  SUBCASE("query at a vertex") {
    const TriangleMesh sphere = synth::icosphere(2, 1.0);
    const SurfaceIndex index(sphere);
    const ClosestPoint cp = index.closest_point(sphere.vertex(17));
    CHECK(cp.distance <= 1e-12);
    CHECK((cp.point - sphere.vertex(17)).norm() <= 1e-12);
  }
  SUBCASE("centroid of an icosphere") {
    const TriangleMesh sphere = synth::icosphere(2, 1.0);
    const SurfaceIndex index(sphere);
    const ClosestPoint cp = index.closest_point(Vec3::Zero());
    double plane = 1e9;
    for (std::size_t f = 0; f < sphere.num_faces(); ++f) {
      const Vec3 n = sphere.face_normal(static_cast<int>(f));
      plane = std::min(plane, std::abs(n.dot(sphere.vertex(sphere.face(static_cast<int>(f))[0]))));
    }
    CHECK(std::abs(cp.distance - plane) <= 1e-3);
    CHECK(cp.distance == doctest::Approx(closest_point_brute_force(sphere, Vec3::Zero()).distance).epsilon(1e-12));
  }
  SUBCASE("5 mm above a flat patch") {
    const TriangleMesh patch = synth::grid(8, 4.0);
    const SurfaceIndex index(patch);
    const ClosestPoint cp = index.closest_point(Vec3(0.3, -0.7, 5.0));
    CHECK(cp.distance == doctest::Approx(5.0).epsilon(1e-12));
    CHECK((cp.point - Vec3(0.3, -0.7, 0.0)).norm() <= 1e-12);
  }
}

TEST_CASE("BVH matches exhaustive search") {
  const TriangleMesh mesh = synth::frustum_die(synth::DieParameters{}).die;
  REQUIRE(mesh.num_faces() <= 20000);
  const SurfaceIndex index(mesh);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-8.0, 8.0);
  for (int i = 0; i < 300; ++i) {
    const Vec3 q(u(rng), u(rng), u(rng) * 0.5 + 3.0);
    const ClosestPoint a = index.closest_point(q);
    const ClosestPoint b = closest_point_brute_force(mesh, q);
    CHECK(std::abs(a.distance - b.distance) <= 1e-9 * std::max(1.0, b.distance));
    CHECK(a.barycentric.minCoeff() >= -1e-12);
    CHECK(std::abs(a.barycentric.sum() - 1.0) <= 1e-9);
    const Face& t = mesh.face(a.face);
    const Vec3 rebuilt = a.barycentric.x() * mesh.vertex(t[0]) + a.barycentric.y() * mesh.vertex(t[1]) +
                         a.barycentric.z() * mesh.vertex(t[2]);
    CHECK((rebuilt - a.point).norm() <= 1e-9);
  }
}

TEST_CASE("k-d tree matches brute force") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec3> pts(500);
  for (Vec3& p : pts) p = Vec3(g(rng), g(rng), g(rng));
  const KdTree tree(pts);
  for (int i = 0; i < 100; ++i) {
    const Vec3 q(g(rng), g(rng), g(rng));
    int best = -1;
    double bd = 1e300;
    std::vector<int> within;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const double d = (pts[j] - q).norm();
      if (d < bd) {
        bd = d;
        best = static_cast<int>(j);
      }
      if (d <= 0.5) within.push_back(static_cast<int>(j));
    }
    const auto [idx, dist] = tree.nearest(q);
    CHECK(idx == best);
    CHECK(dist == doctest::Approx(bd).epsilon(1e-12));
    CHECK(tree.radius_search(q, 0.5) == within);
  }
}
