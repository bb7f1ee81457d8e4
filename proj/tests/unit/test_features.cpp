#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "doctest.h"
#include "prepline/error.hpp"
#include "prepline/features.hpp"
#include "prepline/preprocess.hpp"
#include "prepline/synth.hpp"

using namespace prepline;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("sphere curvature") {
  const TriangleMesh sphere = synth::icosphere(4, 10.0);
  const CurvatureResult h = compute_mean_curvature(sphere);
  CHECK(h.warnings.empty());
  std::vector<double> rel;
  for (double v : h.values) rel.push_back(std::abs(v - 0.1) / 0.1);
  CHECK(median(rel) <= 0.05);
}

TEST_CASE("cylinder curvature") {
  const TriangleMesh cyl = synth::cylinder(64, 40, 5.0, 20.0);
  const CurvatureResult h = compute_mean_curvature(cyl);
  std::vector<double> rel;
  for (std::size_t v = 0; v < cyl.num_vertices(); ++v) {
    const double z = cyl.vertex(static_cast<int>(v)).z();
    if (z < 2.0 || z > 18.0) continue;
    rel.push_back(std::abs(h.values[v] - 0.1) / 0.1);
  }
  REQUIRE(!rel.empty());
  CHECK(median(rel) <= 0.08);
}

TEST_CASE("flat grid curvature is zero in the interior") {
  const TriangleMesh grid = synth::grid(10, 5.0);
  const std::vector<double> raw = raw_mean_curvature(grid);
  const auto loops = extract_boundary_loops(grid);
  std::vector<char> boundary(grid.num_vertices(), 0);
  for (int v : loops.at(0).vertices) boundary[static_cast<std::size_t>(v)] = 1;
  for (std::size_t v = 0; v < grid.num_vertices(); ++v) {
    if (!boundary[v]) CHECK(std::abs(raw[v]) <= 1e-6);
  }
}

TEST_CASE("curvature is rigid invariant and scales inversely") {
  const auto die = synth::frustum_die(synth::DieParameters{});
  const TriangleMesh& mesh = die.die;
  const std::vector<double> base = compute_mean_curvature(mesh).values;
  Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const std::vector<double> moved = compute_mean_curvature(mesh.transformed(r, Vec3(3, -4, 5))).values;
  const std::vector<double> scaled = compute_mean_curvature(mesh.transformed(2.5 * Eigen::Matrix3d::Identity(), Vec3::Zero())).values;
  double scale = 0.0;
  for (double v : base) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(std::abs(moved[i] - base[i]) <= 1e-6 * scale);
    CHECK(std::abs(scaled[i] * 2.5 - base[i]) <= 1e-6 * scale);
  }
}

TEST_CASE("convex regions have positive curvature") {
  const CurvatureResult h = compute_mean_curvature(synth::icosphere(3, 2.0));
  for (double v : h.values) CHECK(v > 0.0);
}

TEST_CASE("degenerate triangles warn instead of producing NaN") {
  std::vector<Vec3> v{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {2, 0, 0}, {1, 1, 1}};
  std::vector<Face> f{{0, 1, 2}, {0, 1, 3}, {1, 4, 2}};
  const CurvatureResult h = compute_mean_curvature(TriangleMesh(v, f));
  CHECK(h.warnings.size() == 1);
  for (double x : h.values) CHECK(std::isfinite(x));
}

TEST_CASE("channel counts per configuration") {
  CHECK(feature_channels({true, true}) == 18);
  CHECK(feature_channels({true, false}) == 15);
  CHECK(feature_channels({false, true}) == 9);
  CHECK(feature_channels({false, false}) == 6);
}

TEST_CASE("assembled feature layout") {
  const TriangleMesh mesh = normalize(synth::icosphere(2, 3.0)).mesh;
  const std::vector<double> curv = compute_mean_curvature(synth::icosphere(2, 3.0)).values;
  const CellFeatures full = assemble_features(mesh, {true, true}, curv);
  REQUIRE(full.channels() == 18);
  REQUIRE(full.rows() == static_cast<Eigen::Index>(mesh.num_faces()));
  const CellFeatures no_coords = assemble_features(mesh, {false, true}, curv);
  const CellFeatures no_curv = assemble_features(mesh, {true, false});
  for (Eigen::Index f = 0; f < full.rows(); ++f) {
    const Face& t = mesh.face(static_cast<int>(f));
    CHECK((full.values.block<1, 3>(f, 0).transpose() - mesh.vertex(t[0])).norm() == 0.0);
    CHECK((full.values.block<1, 3>(f, 9).transpose() - mesh.barycenter(static_cast<int>(f))).norm() <= 1e-15);
    CHECK(std::abs(full.values.block<1, 3>(f, 12).norm() - 1.0) <= 1e-6);
    CHECK(full.values(f, 17) == curv[static_cast<std::size_t>(t[2])]);
    CHECK((no_coords.values.row(f) - full.values.block<1, 9>(f, 9)).norm() == 0.0);
    CHECK((no_curv.values.row(f) - full.values.block<1, 15>(f, 0)).norm() == 0.0);
  }
  CHECK_THROWS_AS(assemble_features(mesh, {true, true}), Error);
}

TEST_CASE("feature rows depend only on their own face") {
  const TriangleMesh mesh = synth::icosphere(1, 1.0);
  std::vector<Face> faces = mesh.faces();
  std::swap(faces[3], faces[10]);
  std::swap(faces[5], faces[15]);
  const TriangleMesh permuted(mesh.vertices(), faces);
  const CellFeatures a = assemble_features(mesh, {true, false});
  const CellFeatures b = assemble_features(permuted, {true, false});
  CHECK((a.values.row(0) - b.values.row(0)).norm() == 0.0);
  CHECK((a.values.row(3) - b.values.row(10)).norm() == 0.0);
}

TEST_CASE("adjacency matrices") {
  SUBCASE("singleton") {
    const std::vector<Vec3> b{Vec3(0, 0, 0)};
    const AdjacencyPair adj = build_adjacency(b, 0.1, 0.2);
    CHECK(Eigen::MatrixXd(adj.small).isApprox(Eigen::MatrixXd::Identity(1, 1)));
    CHECK(Eigen::MatrixXd(adj.large).isApprox(Eigen::MatrixXd::Identity(1, 1)));
  }
  SUBCASE("pair between the radii") {
    const std::vector<Vec3> b{Vec3(0, 0, 0), Vec3(0.15, 0, 0)};
    const AdjacencyPair adj = build_adjacency(b, 0.1, 0.2);
    CHECK(Eigen::MatrixXd(adj.small).isApprox(Eigen::MatrixXd::Identity(2, 2)));
    CHECK(Eigen::MatrixXd(adj.large).isApprox(Eigen::MatrixXd::Constant(2, 2, 0.5)));
  }
  SUBCASE("random points against brute force") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Vec3> b(100);
    for (Vec3& p : b) p = Vec3(u(rng), u(rng), u(rng));
    double diameter = 0.0;
    for (const Vec3& p : b) {
      for (const Vec3& q : b) diameter = std::max(diameter, (p - q).norm());
    }
    const AdjacencyPair adj = build_adjacency(b, 0.5, diameter);
    const Eigen::MatrixXd large(adj.large);
    CHECK((large - Eigen::MatrixXd::Constant(100, 100, 0.01)).cwiseAbs().maxCoeff() <= 1e-12);
    const Eigen::MatrixXd small(adj.small);
    for (int i = 0; i < 100; ++i) {
      int count = 0;
      for (int j = 0; j < 100; ++j) count += (b[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(j)]).norm() <= 0.5;
      for (int j = 0; j < 100; ++j) {
        const bool near = (b[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(j)]).norm() <= 0.5;
        CHECK(small(i, j) == doctest::Approx(near ? 1.0 / count : 0.0));
      }
    }
  }
  SUBCASE("rows sum to one and supports nest") {
    const TriangleMesh mesh = normalize(synth::frustum_die(synth::DieParameters{}).die).mesh;
    const AdjacencyPair adj = build_adjacency(mesh.barycenters());
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(mesh.num_faces()));
    CHECK(((adj.small * ones) - ones).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(((adj.large * ones) - ones).cwiseAbs().maxCoeff() <= 1e-6);
    for (Eigen::Index r = 0; r < adj.small.outerSize(); ++r) {
      CHECK(adj.small.coeff(r, r) > 0.0);
      for (SparseMatrix::InnerIterator it(adj.small, r); it; ++it) CHECK(adj.large.coeff(r, it.col()) > 0.0);
    }
  }
  CHECK_THROWS_AS(build_adjacency(std::vector<Vec3>{Vec3::Zero()}, 0.3, 0.2), Error);
}

TEST_CASE("feature container round trip") {
  const TriangleMesh mesh = normalize(synth::icosphere(2, 3.0)).mesh;
  const std::vector<double> curv = compute_mean_curvature(mesh).values;
  const CellFeatures f = assemble_features(mesh, {true, true}, curv);
  const AdjacencyPair adj = build_adjacency(mesh.barycenters(), 0.3, 0.6);
  const std::string bytes = serialize_features(f, adj);
  const auto [f2, adj2] = deserialize_features(bytes);
  CHECK(f2.values == f.values);
  CHECK(f2.options.include_curvature);
  CHECK(adj2.radius_small == 0.3);
  CHECK(Eigen::MatrixXd(adj2.small) == Eigen::MatrixXd(adj.small));
  CHECK(Eigen::MatrixXd(adj2.large) == Eigen::MatrixXd(adj.large));
  CHECK_THROWS_AS(deserialize_features(bytes.substr(0, bytes.size() - 3)), Error);
  CHECK_THROWS_AS(deserialize_features("garbage!"), Error);
}
