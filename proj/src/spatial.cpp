#include "prepline/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace prepline {
namespace {

constexpr double kTieTolerance = 1e-12;
constexpr int kLeafSize = 4;

// Squared distance from a point to an axis-aligned box (0 inside).
double box_distance2(const Eigen::AlignedBox3d& box, const Vec3& q) {
  const Vec3 d = (box.min() - q).cwiseMax(q - box.max()).cwiseMax(0.0);
  return d.squaredNorm();
}

bool better(double d, int face, double best_d, int best_face) {
  if (best_face < 0) return true;
  if (d < best_d - kTieTolerance) return true;
  return d <= best_d + kTieTolerance && face < best_face;
}

}  // namespace

// Ericson, Real-Time Collision Detection, 5.1.5.
ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                                       const Vec3& c) {
  ClosestPoint out;
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  auto finish = [&](double u, double v, double w) {
    out.barycentric = Vec3(u, v, w);
    out.point = u * a + v * b + w * c;
    out.distance = (p - out.point).norm();
    return out;
  };
  if (d1 <= 0.0 && d2 <= 0.0) return finish(1, 0, 0);

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return finish(0, 1, 0);

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return finish(1 - v, v, 0);
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return finish(0, 0, 1);

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return finish(1 - w, 0, w);
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return finish(0, 1 - w, w);
  }

  const double denom = va + vb + vc;
  if (denom <= 0.0) {
    // Degenerate triangle: fall back to the closest of its edges.
    ClosestPoint best = closest_point_on_triangle(p, a, b, b);
    for (const auto& cand : {closest_point_on_triangle(p, b, c, c), closest_point_on_triangle(p, a, c, c)}) {
      if (cand.distance < best.distance) best = cand;
    }
    return best;
  }
  const double v = vb / denom;
  const double w = vc / denom;
  return finish(1.0 - v - w, v, w);
}

SurfaceIndex::SurfaceIndex(const TriangleMesh& mesh)
    : vertices_(mesh.vertices()), faces_(mesh.faces()) {
  order_.resize(faces_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::vector<Vec3> centroids(faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) centroids[f] = mesh.barycenter(static_cast<int>(f));
  nodes_.reserve(2 * faces_.size() / kLeafSize + 2);
  if (!faces_.empty()) build(0, static_cast<int>(faces_.size()), centroids);
}

int SurfaceIndex::build(int begin, int end, std::vector<Vec3>& centroids) {
  Node node;
  node.box.setEmpty();
  Eigen::AlignedBox3d centroid_box;
  centroid_box.setEmpty();
  for (int i = begin; i < end; ++i) {
    const Face& t = faces_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
    for (int v : t) node.box.extend(vertices_[static_cast<std::size_t>(v)]);
    centroid_box.extend(centroids[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]);
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= kLeafSize) {
    nodes_[static_cast<std::size_t>(id)].begin = begin;
    nodes_[static_cast<std::size_t>(id)].end = end;
    return id;
  }
  int axis = 0;
  centroid_box.sizes().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int x, int y) {
                     const double cx = centroids[static_cast<std::size_t>(x)][axis];
                     const double cy = centroids[static_cast<std::size_t>(y)][axis];
                     return cx < cy || (cx == cy && x < y);
                   });
  const int left = build(begin, mid, centroids);
  const int right = build(mid, end, centroids);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

ClosestPoint SurfaceIndex::closest_point(const Vec3& query) const {
  ClosestPoint best;
  best.distance = std::numeric_limits<double>::infinity();
  if (nodes_.empty()) return best;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    const double bound = best.distance + kTieTolerance;
    if (box_distance2(node.box, query) > bound * bound) continue;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int f = order_[static_cast<std::size_t>(i)];
        const Face& t = faces_[static_cast<std::size_t>(f)];
        ClosestPoint cand = closest_point_on_triangle(query, vertices_[static_cast<std::size_t>(t[0])],
                                                      vertices_[static_cast<std::size_t>(t[1])],
                                                      vertices_[static_cast<std::size_t>(t[2])]);
        if (better(cand.distance, f, best.distance, best.face)) {
          best = cand;
          best.face = f;
        }
      }
      continue;
    }
    const double dl = box_distance2(nodes_[static_cast<std::size_t>(node.left)].box, query);
    const double dr = box_distance2(nodes_[static_cast<std::size_t>(node.right)].box, query);
    // Visit the nearer child first (pushed last).
    if (dl <= dr) {
      stack.push_back(node.right);
      stack.push_back(node.left);
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
  return best;
}

ClosestPoint closest_point_brute_force(const TriangleMesh& mesh, const Vec3& query) {
  ClosestPoint best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    const Face& t = mesh.face(static_cast<int>(f));
    ClosestPoint cand = closest_point_on_triangle(query, mesh.vertex(t[0]), mesh.vertex(t[1]), mesh.vertex(t[2]));
    if (better(cand.distance, static_cast<int>(f), best.distance, best.face)) {
      best = cand;
      best.face = static_cast<int>(f);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  index_.resize(points_.size());
  std::iota(index_.begin(), index_.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(0, static_cast<int>(points_.size()), 0);
}

int KdTree::build(int begin, int end, int depth) {
  if (begin >= end) return -1;
  // Split on the widest axis of this range.
  Eigen::AlignedBox3d box;
  box.setEmpty();
  for (int i = begin; i < end; ++i) box.extend(points_[static_cast<std::size_t>(index_[static_cast<std::size_t>(i)])]);
  int axis = depth % 3;
  box.sizes().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end, [&](int x, int y) {
    const double cx = points_[static_cast<std::size_t>(x)][axis];
    const double cy = points_[static_cast<std::size_t>(y)][axis];
    return cx < cy || (cx == cy && x < y);
  });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({index_[static_cast<std::size_t>(mid)], axis, -1, -1});
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid + 1, end, depth + 1);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void KdTree::nearest_rec(int node_id, const Vec3& q, int& best, double& best_d2) const {
  if (node_id < 0) return;
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  const Vec3& p = points_[static_cast<std::size_t>(node.point)];
  const double d2 = (p - q).squaredNorm();
  if (d2 < best_d2 || (d2 == best_d2 && node.point < best)) {
    best_d2 = d2;
    best = node.point;
  }
  const double diff = q[node.axis] - p[node.axis];
  const int near = diff <= 0 ? node.left : node.right;
  const int far = diff <= 0 ? node.right : node.left;
  nearest_rec(near, q, best, best_d2);
  if (diff * diff <= best_d2) nearest_rec(far, q, best, best_d2);
}

std::pair<int, double> KdTree::nearest(const Vec3& query) const {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  nearest_rec(root_, query, best, best_d2);
  return {best, std::sqrt(best_d2)};
}

void KdTree::radius_rec(int node_id, const Vec3& q, double r2, std::vector<int>& out) const {
  if (node_id < 0) return;
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  const Vec3& p = points_[static_cast<std::size_t>(node.point)];
  if ((p - q).squaredNorm() <= r2) out.push_back(node.point);
  const double diff = q[node.axis] - p[node.axis];
  if (diff <= 0 || diff * diff <= r2) radius_rec(node.left, q, r2, out);
  if (diff >= 0 || diff * diff <= r2) radius_rec(node.right, q, r2, out);
}

std::vector<int> KdTree::radius_search(const Vec3& query, double radius) const {
  std::vector<int> out;
  radius_rec(root_, query, radius * radius, out);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace prepline
