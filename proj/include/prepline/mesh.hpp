#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace prepline {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

/// Indexed triangle surface. Coordinates are millimeters unless a caller has
/// normalized them.
class TriangleMesh {
 public:
  TriangleMesh() = default;

  /// Throws Error(kEmptyMesh) on zero faces and Error(kTopology) when a face
  /// references a missing vertex or repeats a vertex index.
  TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces);

  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_faces() const { return faces_.size(); }
  bool empty() const { return faces_.empty(); }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const Vec3& vertex(int v) const { return vertices_[static_cast<std::size_t>(v)]; }
  const Face& face(int f) const { return faces_[static_cast<std::size_t>(f)]; }

  /// Vertex positions may be edited in place; connectivity may not.
  std::vector<Vec3>& mutable_vertices() { return vertices_; }

  /// Unit normal from the right-hand rule; zero vector for a zero-area face.
  Vec3 face_normal(int f) const;
  Vec3 barycenter(int f) const;
  double face_area(int f) const;

  std::vector<Vec3> face_normals() const;
  std::vector<Vec3> barycenters() const;
  std::vector<double> face_areas() const;

  /// Area-weighted vertex normals (unit, or zero for isolated vertices).
  std::vector<Vec3> vertex_normals() const;

  double bounding_box_diagonal() const;
  double mean_edge_length() const;
  double max_edge_length() const;

  /// Applies x -> rotation * x + translation to every vertex.
  TriangleMesh transformed(const Eigen::Matrix3d& rotation, const Vec3& translation) const;

 private:
  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
};

/// Per-face integer label, 1 = crown-bottom region, 0 = rest of the die.
struct LabeledMesh {
  TriangleMesh mesh;
  std::vector<int> labels;
};

struct MeshEdge {
  int v0 = -1;  // v0 < v1
  int v1 = -1;
  std::array<int, 2> faces{-1, -1};
  bool is_boundary() const { return faces[1] < 0; }
};

/// Edge table and edge-sharing face neighborhoods. Construction throws
/// Error(kTopology) on an edge with more than two incident faces.
class FaceAdjacency {
 public:
  explicit FaceAdjacency(const TriangleMesh& mesh);

  std::span<const int> neighbors(int f) const;
  const std::vector<MeshEdge>& edges() const { return edges_; }

  /// Edge index of the local edge k of face f, i.e. (face[k], face[(k+1)%3]).
  int face_edge(int f, int k) const { return face_edges_[static_cast<std::size_t>(f)][static_cast<std::size_t>(k)]; }

  /// The face across local edge k of f, or -1.
  int across(int f, int k) const;

  std::size_t num_faces() const { return face_edges_.size(); }

 private:
  std::vector<MeshEdge> edges_;
  std::vector<std::array<int, 3>> face_edges_;
  std::vector<int> neighbor_offsets_;
  std::vector<int> neighbor_list_;
};

struct BoundaryLoop {
  std::vector<int> vertices;  // cyclic; last connects back to first
  double length = 0.0;
};

/// Loops formed by edges with a single incident face, sorted by length
/// descending. Closed meshes give an empty list.
std::vector<BoundaryLoop> extract_boundary_loops(const TriangleMesh& mesh);
std::vector<BoundaryLoop> extract_boundary_loops(const TriangleMesh& mesh,
                                                 const FaceAdjacency& adjacency);

/// Edge-connected components of a face subset, largest first. Each component
/// lists its faces in ascending order.
std::vector<std::vector<int>> connected_components(std::span<const int> face_subset,
                                                   const FaceAdjacency& adjacency);

}  // namespace prepline
