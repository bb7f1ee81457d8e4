#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "prepline/mesh.hpp"
#include "prepline/spatial.hpp"

namespace prepline {

struct BoundaryFaces {
  std::vector<int> faces;    // label-1 faces along the label boundary, in loop order
  std::vector<Vec3> centers; // their barycenters
};

/// Walks the label boundary: half-edges of label-1 faces whose neighbor is
/// label 0, chained head to tail, so the label-1 region stays on the left.
/// The longest loop is used; it starts at its lowest face id. Throws
/// Error(kNoBoundary) when the labels are uniform and Error(kIncompleteMargin)
/// when the boundary runs into the mesh border instead of closing.
BoundaryFaces extract_boundary_faces(const LabeledMesh& labeled);

/// s = 0.005 (N - sqrt(2N)), in mm^2 for points in mm.
double smoothing_bound(std::size_t n);

/// Uniform periodic cubic B-spline on [0, 1).
struct SmoothingSpline {
  Eigen::MatrixX3d control;  // one control point per knot interval
  double bound = 0.0;        // s
  double residual = 0.0;     // sum of squared distances fit(t_i) - p_i
  double penalty_weight = 0.0;
  std::vector<double> parameters;  // chord-length t_i of the input points

  std::size_t num_control() const { return static_cast<std::size_t>(control.rows()); }
  /// Knot values j / M, j = 0..M.
  std::vector<double> knots() const;
  Vec3 evaluate(double t) const;
  /// Derivative of order 1..3 with respect to t.
  Vec3 derivative(double t, int order) const;
};

struct SplineOptions {
  int initial_control_points = 8;
  /// Accept residuals in [1 - tolerance, 1 + tolerance] * s once smoothing.
  double tolerance = 0.05;
};

/// Closed chord-length smoothing spline in the style of knot-insertion
/// smoothing: with the fewest control points the least-squares fit is kept if
/// it already meets s; otherwise control points are added until the
/// least-squares residual drops below s, and then a second-derivative penalty
/// is bisected so the residual lands within tolerance of s.
/// Throws Error(kSpline) for fewer than 8 points or (near-)collinear input.
SmoothingSpline fit_smoothing_spline(std::span<const Vec3> points, const SplineOptions& options = {});

struct MarginLine {
  std::string case_id;
  std::vector<Vec3> points;  // closed loop on the original die surface, mm
  SmoothingSpline spline;
  std::vector<std::string> warnings;
};

/// Boundary face centers -> closest points on the original die -> smoothing
/// spline -> `samples` parameter-uniform points -> closest points on the
/// original die. A self-intersecting loop (checked in its best-fit plane) is a
/// warning.
MarginLine extract_margin_line(const LabeledMesh& labeled, const TriangleMesh& original_die, int samples = 5000,
                               const SplineOptions& options = {});
MarginLine extract_margin_line(const LabeledMesh& labeled, const SurfaceIndex& original_die, int samples = 5000,
                               const SplineOptions& options = {});

/// True when two non-adjacent segments of the closed polyline cross once the
/// loop is projected onto its least-squares plane.
bool loop_self_intersects(std::span<const Vec3> loop);

/// `{"case_id", "n", "points": [[x,y,z], ...], "closed": true}`.
std::string margin_to_json(const MarginLine& line);
MarginLine margin_from_json(std::string_view text);
/// OBJ polyline: one `v` per point and a closing `l` element.
std::string margin_to_obj(const MarginLine& line);

}  // namespace prepline
