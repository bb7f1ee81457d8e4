#pragma once

#include <cstdint>
#include <vector>

#include "prepline/mesh.hpp"

namespace prepline::synth {

/// Subdivided icosahedron projected onto a sphere: 20 * 4^subdivisions faces.
TriangleMesh icosphere(int subdivisions, double radius = 1.0);

/// Open cylinder along z with `segments` around and `rings` vertex rings.
TriangleMesh cylinder(int segments, int rings, double radius, double height);

/// Flat square grid in the z = 0 plane, n x n quads, centered at the origin.
TriangleMesh grid(int n, double size);

/// Closed axis-aligned box centered at the origin (8 vertices, 12 faces).
TriangleMesh box(const Vec3& extents);

/// Upper hemisphere (z >= 0) with an open equator; optional puncture at the
/// pole that removes the faces around the apex.
TriangleMesh hemisphere(int segments, int rings, double radius, bool puncture_pole = false);

struct DieParameters {
  double base_radius = 5.0;        // x semi-axis of the margin ellipse (mm)
  double ellipticity = 0.88;       // y / x
  double wall_height = 1.2;        // base boundary to margin crease
  double margin_tilt = 0.2;        // crease height varies by tilt * cos(theta)
  double modulation = 0.03;        // relative radial wobble amplitude
  double modulation_phase = 0.0;
  double shoulder_width = 0.8;     // horizontal ledge inside the crease
  double frustum_height = 2.0;
  double top_radius_ratio = 0.55;  // frustum top radius / frustum base radius
  double fillet_radius = 1.0;
  int segments = 96;
  double spacing = 0.35;           // approximate profile spacing (mm)
};

struct SyntheticDie {
  TriangleMesh die;           // open at the base (z = 0)
  TriangleMesh crown_bottom;  // faces above the crease; its boundary is the margin
  std::vector<int> crown_labels;  // per die face: 1 above the crease
  DieParameters params;

  /// Point on the analytic crease (margin) curve at angle theta.
  Vec3 crease_point(double theta) const;
  std::vector<Vec3> crease_samples(int count) const;
};

/// Surface of revolution with an elliptical cross-section: a short wall, a
/// sharp convex crease at the margin, a horizontal shoulder, a tapered
/// frustum and a filleted flat top.
SyntheticDie frustum_die(const DieParameters& params);

/// Random die parameters within the benchmark ranges.
DieParameters random_die_parameters(std::uint64_t seed);

}  // namespace prepline::synth
