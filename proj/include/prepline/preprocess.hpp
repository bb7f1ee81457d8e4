#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "prepline/mesh.hpp"

namespace prepline {

enum class Arch { kUpper, kLower };

Arch parse_arch(const std::string& text);
std::string to_string(Arch arch);

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  /// (*this) after `first`: x -> this(first(x)).
  RigidTransform compose(const RigidTransform& first) const;
  TriangleMesh apply(const TriangleMesh& mesh) const { return mesh.transformed(rotation, translation); }
};

struct NormalizationTransform {
  Vec3 mean = Vec3::Zero();
  Vec3 stddev = Vec3::Ones();

  Vec3 apply(const Vec3& p) const { return (p - mean).cwiseQuotient(stddev); }
  Vec3 invert(const Vec3& p) const { return p.cwiseProduct(stddev) + mean; }
};

/// Indices of all points on the convex hull boundary (quickhull). Throws
/// Error(kRegistration) for coplanar or collinear input.
std::vector<int> convex_hull_vertices(std::span<const Vec3> points);

struct Registration {
  TriangleMesh mesh;
  RigidTransform transform;
};

/// Oriented-bounding-box registration. Principal axes of the convex hull
/// vertices map to x (largest variance), y, z (smallest); the vertex mean
/// lands on the origin. Axis signs are fixed intrinsically so the result does
/// not depend on the input pose:
///  - z: the largest boundary loop (die base) sits at negative z; closed
///    meshes put the farthest vertex from the centroid at positive z, then the
///    larger hull half-volume at positive z;
///  - x: positive third central moment of the hull vertices;
///  - y = z cross x;
/// remaining ties fall back to the sign of the lowest-index vertex with a
/// non-negligible coordinate. Upper-arch scans are first turned 180 degrees
/// about x, which the returned transform includes.
Registration obb_register(const TriangleMesh& mesh, Arch arch);

struct DecimationResult {
  TriangleMesh mesh;
  std::vector<std::string> warnings;
};

/// Quadric-error edge collapse down to `target_faces`. Boundary vertices never
/// move and boundary edges are never collapsed, so boundary loops survive
/// unchanged; collapses must pass the link condition and must not flip faces.
DecimationResult decimate(const TriangleMesh& mesh, std::size_t target_faces);

struct Normalization {
  TriangleMesh mesh;
  NormalizationTransform transform;
};

/// Per-axis zero mean and unit (population) standard deviation over vertices.
Normalization normalize(const TriangleMesh& mesh);

struct AugmentationSpec {
  std::array<double, 2> rotation_x_deg{-45.0, 45.0};
  std::array<double, 2> rotation_y_deg{-45.0, 45.0};
  std::array<double, 2> rotation_z_deg{-180.0, 180.0};
  std::array<double, 2> scale{0.9, 1.1};
  int samples_per_die = 20;
  std::uint64_t seed = 0;
};

/// Linear map used for one augmented copy: diag(scale) * Rz * Ry * Rx.
Eigen::Matrix3d augmentation_matrix(const AugmentationSpec& spec, std::uint64_t sample_index, int copy);

/// Returns the original followed by `samples_per_die` transformed copies.
/// `sample_index` identifies the case so results do not depend on call order.
std::vector<LabeledMesh> augment(const LabeledMesh& sample, const AugmentationSpec& spec,
                                 std::uint64_t sample_index);

}  // namespace prepline
