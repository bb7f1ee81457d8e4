#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "doctest.h"
#include "prepline/error.hpp"
#include "prepline/margin.hpp"
#include "prepline/synth.hpp"

using namespace prepline;

namespace {

constexpr double kPi = std::numbers::pi;

ErrorKind kind_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kInternal;
}

LabeledMesh cylinder_split(double z_cut) {
  LabeledMesh lm;
  lm.mesh = synth::cylinder(24, 9, 2.0, 8.0);
  for (std::size_t f = 0; f < lm.mesh.num_faces(); ++f) {
    lm.labels.push_back(lm.mesh.barycenter(static_cast<int>(f)).z() > z_cut ? 1 : 0);
  }
  return lm;
}

std::vector<Vec3> circle(int n, double r, std::mt19937_64* rng = nullptr, double sigma = 0.0) {
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * kPi * i / n;
    Vec3 p(r * std::cos(a), r * std::sin(a), 0.0);
    if (rng != nullptr) p += Vec3(noise(*rng), noise(*rng), noise(*rng));
    pts.push_back(p);
  }
  return pts;
}

double distance_to_circle(const Vec3& p, double r) {
  return std::hypot(std::hypot(p.x(), p.y()) - r, p.z());
}

double max_circle_deviation(const SmoothingSpline& s, double r) {
  double worst = 0.0;
  for (int k = 0; k < 4000; ++k) worst = std::max(worst, distance_to_circle(s.evaluate(k / 4000.0), r));
  return worst;
}

}  // namespace

TEST_CASE("boundary faces of a cylinder split at the equator") {
  const LabeledMesh lm = cylinder_split(4.0);
  const BoundaryFaces b = extract_boundary_faces(lm);
  REQUIRE(b.faces.size() == 24);
  CHECK(b.faces.front() == *std::min_element(b.faces.begin(), b.faces.end()));
  double previous = std::atan2(b.centers[0].y(), b.centers[0].x());
  int direction = 0;
  for (std::size_t i = 1; i <= b.centers.size(); ++i) {
    const Vec3& c = b.centers[i % b.centers.size()];
    CHECK(lm.labels[static_cast<std::size_t>(b.faces[i % b.faces.size()])] == 1);
    CHECK(c.z() > 4.0);
    CHECK(c.z() < 5.0);
    const double angle = std::atan2(c.y(), c.x());
    double step = std::remainder(angle - previous, 2.0 * kPi);
    CHECK(std::abs(std::abs(step) - 2.0 * kPi / 24) < 1e-9);
    const int sign = step > 0 ? 1 : -1;
    if (direction == 0) direction = sign;
    CHECK(sign == direction);
    previous = angle;
  }
}

TEST_CASE("boundary extraction errors") {
  LabeledMesh lm = cylinder_split(4.0);
  std::fill(lm.labels.begin(), lm.labels.end(), 1);
  CHECK(kind_of([&] { extract_boundary_faces(lm); }) == ErrorKind::kNoBoundary);
  // A half-cylinder region reaches the open ends: no closed loop.
  for (std::size_t f = 0; f < lm.labels.size(); ++f) lm.labels[f] = lm.mesh.barycenter(static_cast<int>(f)).y() > 0.0;
  try {
    extract_boundary_faces(lm);
    FAIL("expected an open-boundary error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIncompleteMargin);
    CHECK(std::string(e.what()).find("vertex") != std::string::npos);
  }
}

TEST_CASE("smoothing bound") {
  CHECK(smoothing_bound(5000) == doctest::Approx(24.5).epsilon(1e-12));
  CHECK(smoothing_bound(200) == doctest::Approx(0.005 * 180.0).epsilon(1e-12));
}

TEST_CASE("spline on an exact circle") {
  const auto pts = circle(200, 5.0);
  const SmoothingSpline s = fit_smoothing_spline(pts);
  CHECK(s.residual <= s.bound);
  // Eight uniform cubic segments already meet s; their shape error on a
  // radius-5 circle is a few micrometers.
  CHECK(max_circle_deviation(s, 5.0) <= 0.01);
}

TEST_CASE("spline on a noisy circle") {
  std::mt19937_64 rng(20);
  const auto pts = circle(200, 5.0, &rng, 0.020);
  const SmoothingSpline s = fit_smoothing_spline(pts);
  CHECK(s.residual <= 1.05 * smoothing_bound(200));
  CHECK(max_circle_deviation(s, 5.0) <= 0.050);
}

TEST_CASE("spline continuity across the wrap") {
  std::mt19937_64 rng(4);
  const auto pts = circle(300, 4.0, &rng, 0.05);
  const SmoothingSpline s = fit_smoothing_spline(pts);
  for (int order = 0; order <= 2; ++order) {
    const Vec3 right = s.derivative(0.0, order);
    const Vec3 left = s.derivative(1.0 - 1e-15, order);
    CHECK((right - left).norm() <= 1e-9 * std::max(1.0, right.norm()));
  }
  CHECK(s.knots().size() == s.num_control() + 1);
}

TEST_CASE("spline grows and then smooths when few control points cannot meet s") {
  // A ten-lobed flower needs more than eight control points.
  std::vector<Vec3> pts;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> noise(0.0, 0.03);
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * kPi * i / n;
    const double r = 5.0 + 0.8 * std::cos(10.0 * a);
    pts.emplace_back(r * std::cos(a) + noise(rng), r * std::sin(a) + noise(rng), 0.3 * std::sin(3 * a) + noise(rng));
  }
  const SmoothingSpline s = fit_smoothing_spline(pts);
  CHECK(s.num_control() > 8);
  CHECK(s.penalty_weight > 0.0);
  CHECK(s.residual <= s.bound);
  CHECK(s.residual >= 0.95 * s.bound);
}

TEST_CASE("degenerate spline input") {
  CHECK(kind_of([] { fit_smoothing_spline(circle(7, 1.0)); }) == ErrorKind::kSpline);
  std::vector<Vec3> line;
  for (int i = 0; i < 20; ++i) line.emplace_back(i, 2.0 * i, 0.0);
  CHECK(kind_of([&] { fit_smoothing_spline(line); }) == ErrorKind::kSpline);
}

TEST_CASE("margin line on the labeled surface itself") {
  const LabeledMesh lm = cylinder_split(4.0);
  const MarginLine line = extract_margin_line(lm, lm.mesh, 500);
  REQUIRE(line.points.size() == 500);
  // Faces touching the label boundary.
  const FaceAdjacency adj(lm.mesh);
  std::vector<char> on_boundary_vertex(lm.mesh.num_vertices(), 0);
  for (const MeshEdge& e : adj.edges()) {
    if (!e.is_boundary() && lm.labels[static_cast<std::size_t>(e.faces[0])] != lm.labels[static_cast<std::size_t>(e.faces[1])]) {
      on_boundary_vertex[static_cast<std::size_t>(e.v0)] = 1;
      on_boundary_vertex[static_cast<std::size_t>(e.v1)] = 1;
    }
  }
  std::vector<Face> incident;
  for (const Face& f : lm.mesh.faces()) {
    if (on_boundary_vertex[static_cast<std::size_t>(f[0])] || on_boundary_vertex[static_cast<std::size_t>(f[1])] ||
        on_boundary_vertex[static_cast<std::size_t>(f[2])]) {
      incident.push_back(f);
    }
  }
  const SurfaceIndex near(TriangleMesh(lm.mesh.vertices(), incident));
  for (const Vec3& p : line.points) CHECK(near.closest_point(p).distance <= 1e-9);
}

TEST_CASE("margin line on a synthetic die follows the crease") {
  const auto die = synth::frustum_die(synth::random_die_parameters(2));
  const LabeledMesh lm{die.die, die.crown_labels};
  const SurfaceIndex surface(die.die);
  const MarginLine line = extract_margin_line(lm, surface);
  REQUIRE(line.points.size() == 5000);
  const std::vector<Vec3> crease = die.crease_samples(20000);
  const KdTree tree(crease);
  double worst = 0.0;
  for (const Vec3& p : line.points) {
    CHECK(surface.closest_point(p).distance <= 1e-9);
    worst = std::max(worst, tree.nearest(p).second);
  }
  CHECK(worst <= 2.0 * die.die.mean_edge_length());
  CHECK(line.spline.residual <= 1.05 * line.spline.bound);

  std::vector<double> gaps;
  for (std::size_t i = 0; i < line.points.size(); ++i) {
    gaps.push_back((line.points[(i + 1) % line.points.size()] - line.points[i]).norm());
  }
  std::vector<double> sorted = gaps;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted.back() <= 3.0 * sorted[sorted.size() / 2]);
}

TEST_CASE("margin line is rigid-equivariant") {
  const auto die = synth::frustum_die(synth::random_die_parameters(5));
  const LabeledMesh lm{die.die, die.crown_labels};
  const Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Vec3 t(3.0, -1.0, 2.5);
  const LabeledMesh moved{die.die.transformed(r, t), die.crown_labels};
  const MarginLine a = extract_margin_line(lm, die.die, 1000);
  const MarginLine b = extract_margin_line(moved, moved.mesh, 1000);
  REQUIRE(a.points.size() == b.points.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.points.size(); ++i) worst = std::max(worst, (r * a.points[i] + t - b.points[i]).norm());
  CHECK(worst <= 1e-6);
}

TEST_CASE("self-intersection check") {
  CHECK_FALSE(loop_self_intersects(circle(50, 1.0)));
  std::vector<Vec3> figure_eight;
  for (int i = 0; i < 60; ++i) {
    const double a = 2.0 * kPi * i / 60;
    figure_eight.emplace_back(std::sin(a), std::sin(a) * std::cos(a), 0.0);
  }
  CHECK(loop_self_intersects(figure_eight));
}

TEST_CASE("margin line export and import") {
  MarginLine line;
  line.case_id = "case-7";
  line.points = circle(10, 2.5);
  line.points[3].z() = 0.1 + 1e-13;
  const std::string json = margin_to_json(line);
  const MarginLine back = margin_from_json(json);
  CHECK(back.case_id == "case-7");
  CHECK(back.points == line.points);
  CHECK(margin_to_json(back) == json);
  CHECK(kind_of([] { margin_from_json("{\"points\": [[1, 2]]}"); }) == ErrorKind::kParse);
  CHECK(kind_of([] { margin_from_json("not json"); }) == ErrorKind::kParse);
  const std::string obj = margin_to_obj(line);
  CHECK(std::count(obj.begin(), obj.end(), 'v') == 10);
  CHECK(obj.find("l 1 2 3 4 5 6 7 8 9 10 1\n") != std::string::npos);
}
