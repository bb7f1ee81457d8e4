#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "doctest.h"
#include "prepline/error.hpp"
#include "prepline/labeling.hpp"
#include "prepline/synth.hpp"

using namespace prepline;

namespace {

ErrorKind kind_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kInternal;
}

// Faces of the cylinder band straddling mid-height.
std::vector<int> middle_band(const TriangleMesh& cyl, double lo, double hi) {
  std::vector<int> out;
  for (std::size_t f = 0; f < cyl.num_faces(); ++f) {
    const double z = cyl.barycenter(static_cast<int>(f)).z();
    if (z > lo && z < hi) out.push_back(static_cast<int>(f));
  }
  return out;
}

}  // namespace

TEST_CASE("margin points from an open hemisphere") {
  const int segments = 32;
  const TriangleMesh hemi = synth::hemisphere(segments, 8, 4.0);
  const MarginPoints m = extract_margin_points(hemi);
  REQUIRE(m.points.size() == segments);
  CHECK(m.warnings.empty());
  // Cyclic order: consecutive points are one segment apart.
  const double step = 2.0 * 4.0 * std::sin(std::numbers::pi / segments);
  for (std::size_t i = 0; i < m.points.size(); ++i) {
    CHECK(std::abs(m.points[i].z()) <= 1e-12);
    CHECK((m.points[i] - m.points[(i + 1) % m.points.size()]).norm() == doctest::Approx(step).epsilon(1e-9));
  }
}

TEST_CASE("closed crown bottom has no margin") {
  CHECK(kind_of([] { extract_margin_points(synth::icosphere(2)); }) == ErrorKind::kNoBoundary);
}

TEST_CASE("punctured hemisphere uses the equator and reports the puncture") {
  const TriangleMesh hemi = synth::hemisphere(32, 8, 4.0, true);
  const auto loops = extract_boundary_loops(hemi);
  REQUIRE(loops.size() == 2);
  CHECK(loops[0].length > loops[1].length);
  const MarginPoints m = extract_margin_points(hemi);
  CHECK(m.points.size() == 32);
  for (const Vec3& p : m.points) CHECK(std::abs(p.z()) <= 1e-12);
  CHECK(m.warnings.size() == 1);
}

TEST_CASE("margin face mapping") {
  const TriangleMesh die = synth::frustum_die(synth::DieParameters{}).die;
  const std::vector<int> chosen{3, 50, 400, 1234, 2000};
  std::vector<Vec3> centroids;
  std::vector<Vec3> offset;
  for (int f : chosen) {
    centroids.push_back(die.barycenter(f));
    offset.push_back(die.barycenter(f) + 0.010 * die.face_normal(f));
  }
  CHECK(map_margin_faces(die, centroids) == chosen);
  CHECK(map_margin_faces(die, offset) == chosen);
  std::vector<Vec3> shifted = centroids;
  for (Vec3& p : shifted) p += Vec3(0, 0, 5.0 + 10.0);
  CHECK(kind_of([&] { map_margin_faces(die, shifted); }) == ErrorKind::kAlignment);
}

TEST_CASE("cylinder split by an equatorial ring") {
  const TriangleMesh cyl = synth::cylinder(24, 9, 2.0, 8.0);
  const std::vector<int> ring = middle_band(cyl, 3.0, 4.0);
  REQUIRE(ring.size() == 48);
  const RegionSplit split = split_regions(cyl, ring);
  CHECK(split.dilation_rings == 0);
  for (std::size_t f = 0; f < cyl.num_faces(); ++f) {
    const double z = cyl.barycenter(static_cast<int>(f)).z();
    CHECK(split.labeled.labels[f] == (z > 3.0 ? 1 : 0));
  }
}

TEST_CASE("a gap in the ring") {
  const TriangleMesh cyl = synth::cylinder(24, 9, 2.0, 8.0);
  std::vector<int> ring = middle_band(cyl, 3.0, 4.0);
  // Drop both triangles of one quad so the ring has a real hole.
  ring.erase(ring.begin() + 10, ring.begin() + 12);
  SUBCASE("without healing") {
    SplitOptions strict;
    strict.max_dilation = 0;
    try {
      split_regions(cyl, ring, strict);
      FAIL("expected incomplete-margin error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kIncompleteMargin);
      CHECK(std::string(e.what()).find("gap") != std::string::npos);
    }
  }
  SUBCASE("healed by dilation") {
    const RegionSplit split = split_regions(cyl, ring);
    CHECK(split.dilation_rings == 1);
    CHECK(split.warnings.size() == 1);
    for (std::size_t f = 0; f < cyl.num_faces(); ++f) {
      if (cyl.barycenter(static_cast<int>(f)).z() > 4.0) CHECK(split.labeled.labels[f] == 1);
      if (cyl.barycenter(static_cast<int>(f)).z() < 2.0) CHECK(split.labeled.labels[f] == 0);
    }
  }
  SUBCASE("too wide to heal") {
    std::vector<int> half;
    for (int f : ring) {
      if (cyl.barycenter(f).y() > 0.5) half.push_back(f);
    }
    CHECK(kind_of([&] { split_regions(cyl, half); }) == ErrorKind::kIncompleteMargin);
  }
}

TEST_CASE("synthetic die labels match the crease classification") {
  synth::DieParameters p;
  p.segments = 32;
  p.spacing = 0.06;
  const auto die = synth::frustum_die(p);
  const RegionSplit split = label_die(die.die, die.crown_bottom);
  const std::size_t nf = die.die.num_faces();
  std::size_t mismatched = 0;
  for (std::size_t f = 0; f < nf; ++f) mismatched += split.labeled.labels[f] != die.crown_labels[f];
  CHECK(static_cast<double>(mismatched) <= 0.01 * static_cast<double>(nf));

  // Label-1 faces next to a label-0 face are margin faces or touch one.
  const FaceAdjacency adj(die.die);
  std::vector<char> near_margin(nf, 0);
  for (int f : split.margin_faces) {
    near_margin[static_cast<std::size_t>(f)] = 1;
    for (int g : adj.neighbors(f)) near_margin[static_cast<std::size_t>(g)] = 1;
  }
  std::vector<int> ones;
  for (std::size_t f = 0; f < nf; ++f) {
    if (split.labeled.labels[f] != 1) continue;
    ones.push_back(static_cast<int>(f));
    for (int g : adj.neighbors(static_cast<int>(f))) {
      if (split.labeled.labels[static_cast<std::size_t>(g)] == 0) CHECK(near_margin[f]);
    }
  }
  CHECK(connected_components(ones, adj).size() == 1);
}

TEST_CASE("labeling is invariant under a shared rigid motion") {
  const auto die = synth::frustum_die(synth::random_die_parameters(3));
  const Eigen::Matrix3d r = Eigen::AngleAxisd(1.1, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 t(4.0, -2.0, 7.0);
  const RegionSplit a = label_die(die.die, die.crown_bottom);
  const RegionSplit b = label_die(die.die.transformed(r, t), die.crown_bottom.transformed(r, t));
  CHECK(a.labeled.labels == b.labeled.labels);
}
