#pragma once

#include <span>

#include <Eigen/Geometry>
#include <vector>

#include "prepline/mesh.hpp"

namespace prepline {

struct ClosestPoint {
  Vec3 point = Vec3::Zero();
  int face = -1;
  double distance = 0.0;
  /// Barycentric weights of `point` with respect to the face's vertices.
  Vec3 barycentric = Vec3::Zero();
};

/// Closest point on a single triangle, with barycentric coordinates.
ClosestPoint closest_point_on_triangle(const Vec3& query, const Vec3& a, const Vec3& b,
                                       const Vec3& c);

/// Bounding-volume hierarchy over a triangle mesh. Immutable after
/// construction and safe to query from several threads.
class SurfaceIndex {
 public:
  explicit SurfaceIndex(const TriangleMesh& mesh);

  /// Global minimum over all triangles. Equal-distance ties (within 1e-12 mm)
  /// resolve to the lower face index, so results do not depend on traversal.
  ClosestPoint closest_point(const Vec3& query) const;

  std::size_t num_faces() const { return faces_.size(); }

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1;
    int right = -1;
    int begin = 0;  // leaf range into order_
    int end = 0;
  };

  int build(int begin, int end, std::vector<Vec3>& centroids);

  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// Exhaustive closest point, used as the reference for SurfaceIndex.
ClosestPoint closest_point_brute_force(const TriangleMesh& mesh, const Vec3& query);

/// Static 3-d tree over a point set.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points);

  /// Index of the nearest point (lowest index on exact ties) and its distance.
  std::pair<int, double> nearest(const Vec3& query) const;

  /// Indices of all points with distance <= radius, ascending.
  std::vector<int> radius_search(const Vec3& query, double radius) const;

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end, int depth);
  void nearest_rec(int node, const Vec3& q, int& best, double& best_d2) const;
  void radius_rec(int node, const Vec3& q, double r2, std::vector<int>& out) const;

  std::vector<Vec3> points_;
  std::vector<int> index_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace prepline
