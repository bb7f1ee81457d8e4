#pragma once

#include <span>
#include <string>
#include <vector>

#include "prepline/mesh.hpp"
#include "prepline/spatial.hpp"

namespace prepline {

struct MarginPoints {
  std::vector<Vec3> points;  // vertices of the longest boundary loop, in loop order
  std::vector<std::string> warnings;
};

/// Throws Error(kNoBoundary) for a closed crown bottom. Extra loops are
/// reported as warnings.
MarginPoints extract_margin_points(const TriangleMesh& crown_bottom);

/// Faces of `die` holding the closest surface point of each margin point,
/// sorted and unique. Throws Error(kAlignment) when any point is farther than
/// `max_distance` mm from the surface.
std::vector<int> map_margin_faces(const SurfaceIndex& die_index, std::span<const Vec3> margin_points,
                                  double max_distance = 1.0);
std::vector<int> map_margin_faces(const TriangleMesh& die, std::span<const Vec3> margin_points,
                                  double max_distance = 1.0);

/// Inserts evenly spaced points on every segment of a closed polyline so no
/// two consecutive points are farther apart than `max_spacing`.
std::vector<Vec3> densify_loop(std::span<const Vec3> loop, double max_spacing);

struct RegionSplit {
  LabeledMesh labeled;
  std::vector<int> margin_faces;  // after any gap healing
  int dilation_rings = 0;
  std::vector<std::string> warnings;
};

struct SplitOptions {
  int max_dilation = 2;
  /// Components below this fraction of the die area never count as a region.
  double min_region_fraction = 0.01;
};

/// Removes the margin faces, and labels 1 the remaining component whose
/// area-weighted mean barycenter is highest in z, plus the margin faces.
/// When the margin does not separate the die it is dilated by one face ring
/// at a time, up to `max_dilation` rings, before throwing
/// Error(kIncompleteMargin) with the gap locations.
RegionSplit split_regions(const TriangleMesh& die, std::span<const int> margin_faces,
                          const SplitOptions& options = {});

/// The whole labeling step on a registered die and crown bottom. The margin
/// loop is densified to half the die's mean edge length before mapping so
/// that consecutive margin faces always touch.
RegionSplit label_die(const TriangleMesh& die, const TriangleMesh& crown_bottom,
                      const SplitOptions& options = {});

/// Labels for `target` taken from the `source` face closest to each target
/// barycenter; used to carry full-resolution labels onto a decimated mesh.
std::vector<int> transfer_labels(const LabeledMesh& source, const TriangleMesh& target);

}  // namespace prepline
