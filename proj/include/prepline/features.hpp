#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "prepline/mesh.hpp"

namespace prepline {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct CurvatureResult {
  std::vector<double> values;  // per vertex, 1/mm; convex is positive
  std::vector<std::string> warnings;
};

/// Cotangent Laplace-Beltrami mean curvature with mixed Voronoi areas,
/// then averaged over all vertices within `radius` (default: the mesh's
/// maximum edge length). Boundary vertices use one-sided sums.
CurvatureResult compute_mean_curvature(const TriangleMesh& mesh, std::optional<double> radius = std::nullopt);

/// Unsmoothed per-vertex mean curvature.
std::vector<double> raw_mean_curvature(const TriangleMesh& mesh, std::vector<std::string>* warnings = nullptr);

struct FeatureOptions {
  bool include_vertex_coords = true;
  bool include_curvature = true;
};

/// Per-face input matrix. Column groups, in order: 9 vertex coordinates,
/// 3 barycenter, 3 unit normal, 3 vertex curvatures. Disabled groups are
/// dropped without reordering the rest.
struct CellFeatures {
  Eigen::MatrixXd values;
  FeatureOptions options;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index channels() const { return values.cols(); }
};

int feature_channels(const FeatureOptions& options);

/// `mesh` is the normalized mesh; `vertex_curvature` comes from the mm-scale
/// mesh and is required when curvature is enabled.
CellFeatures assemble_features(const TriangleMesh& mesh, const FeatureOptions& options,
                               std::span<const double> vertex_curvature = {});

struct AdjacencyPair {
  SparseMatrix small;  // A_S
  SparseMatrix large;  // A_L
  double radius_small = 0.1;
  double radius_large = 0.2;
};

/// Row-normalized proximity matrices over barycenters (self included).
AdjacencyPair build_adjacency(std::span<const Vec3> barycenters, double radius_small = 0.1,
                              double radius_large = 0.2);

/// Binary cache: magic "PLFEAT1\0", u64 rows, u64 cols, u8 flags, row-major
/// f64 values, then f64 r_S, f64 r_L and two sparse blocks
/// (u64 nnz, nnz x {u32 row, u32 col, f64 value}).
std::string serialize_features(const CellFeatures& features, const AdjacencyPair& adjacency);
std::pair<CellFeatures, AdjacencyPair> deserialize_features(std::string_view bytes);

}  // namespace prepline
