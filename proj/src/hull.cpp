#include "hull.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <boost/multiprecision/cpp_int.hpp>

#include "prepline/error.hpp"

namespace prepline::detail {
namespace {

struct HullFace {
  std::array<int, 3> v{};
  Vec3 normal = Vec3::Zero();
  double offset = 0.0;
  std::vector<int> outside;
  bool alive = true;

  double distance(const Vec3& p) const { return normal.dot(p) - offset; }
};

// Sign of ((b - a) x (c - a)) . (p - a): positive when p is above the plane
// of the counterclockwise triangle abc. Floating-point filter with the
// orient3d error bound, exact rational arithmetic when the filter fails.
int orientation(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& p) {
  const double adx = a.x() - p.x(), ady = a.y() - p.y(), adz = a.z() - p.z();
  const double bdx = b.x() - p.x(), bdy = b.y() - p.y(), bdz = b.z() - p.z();
  const double cdx = c.x() - p.x(), cdy = c.y() - p.y(), cdz = c.z() - p.z();
  const double bdxcdy = bdx * cdy, cdxbdy = cdx * bdy;
  const double cdxady = cdx * ady, adxcdy = adx * cdy;
  const double adxbdy = adx * bdy, bdxady = bdx * ady;
  const double det = adz * (bdxcdy - cdxbdy) + bdz * (cdxady - adxcdy) + cdz * (adxbdy - bdxady);
  const double permanent = (std::abs(bdxcdy) + std::abs(cdxbdy)) * std::abs(adz) +
                           (std::abs(cdxady) + std::abs(adxcdy)) * std::abs(bdz) +
                           (std::abs(adxbdy) + std::abs(bdxady)) * std::abs(cdz);
  const double bound = 7.771561172376103e-16 * permanent;
  if (det > bound) return -1;
  if (-det > bound) return 1;

  using boost::multiprecision::cpp_rational;
  auto diff = [](const Vec3& u, const Vec3& v, int k) { return cpp_rational(u[k]) - cpp_rational(v[k]); };
  const cpp_rational ux = diff(b, a, 0), uy = diff(b, a, 1), uz = diff(b, a, 2);
  const cpp_rational vx = diff(c, a, 0), vy = diff(c, a, 1), vz = diff(c, a, 2);
  const cpp_rational wx = diff(p, a, 0), wy = diff(p, a, 1), wz = diff(p, a, 2);
  const cpp_rational exact = (uy * vz - uz * vy) * wx + (uz * vx - ux * vz) * wy + (ux * vy - uy * vx) * wz;
  return exact > 0 ? 1 : (exact < 0 ? -1 : 0);
}

std::uint64_t edge_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

}  // namespace

std::vector<std::array<int, 3>> convex_hull(std::span<const Vec3> points) {
  const int n = static_cast<int>(points.size());
  if (n < 4) throw Error(ErrorKind::kRegistration, "convex hull needs at least 4 points");

  Eigen::AlignedBox3d box;
  box.setEmpty();
  for (const Vec3& p : points) box.extend(p);
  const double scale = box.diagonal().norm();
  if (!(scale > 0.0)) throw Error(ErrorKind::kRegistration, "degenerate hull: all points coincide");
  // Only guards the choice of the initial tetrahedron; visibility is exact.
  const double eps = kHullTolerance * scale;

  // Initial tetrahedron.
  int axis = 0;
  box.sizes().maxCoeff(&axis);
  int i0 = 0, i1 = 0;
  for (int i = 1; i < n; ++i) {
    if (points[static_cast<std::size_t>(i)][axis] < points[static_cast<std::size_t>(i0)][axis]) i0 = i;
    if (points[static_cast<std::size_t>(i)][axis] > points[static_cast<std::size_t>(i1)][axis]) i1 = i;
  }
  const Vec3 p0 = points[static_cast<std::size_t>(i0)];
  const Vec3 dir = (points[static_cast<std::size_t>(i1)] - p0).normalized();
  int i2 = -1;
  double best = eps;
  for (int i = 0; i < n; ++i) {
    const Vec3 d = points[static_cast<std::size_t>(i)] - p0;
    const double dist = (d - d.dot(dir) * dir).norm();
    if (dist > best) {
      best = dist;
      i2 = i;
    }
  }
  if (i2 < 0) throw Error(ErrorKind::kRegistration, "degenerate hull: points are collinear");
  const Vec3 plane_n = dir.cross(points[static_cast<std::size_t>(i2)] - p0).normalized();
  int i3 = -1;
  best = eps;
  for (int i = 0; i < n; ++i) {
    const double dist = std::abs(plane_n.dot(points[static_cast<std::size_t>(i)] - p0));
    if (dist > best) {
      best = dist;
      i3 = i;
    }
  }
  if (i3 < 0) throw Error(ErrorKind::kRegistration, "degenerate hull: points are coplanar");

  std::vector<HullFace> faces;
  std::unordered_map<std::uint64_t, int> edge_face;
  auto above = [&](const HullFace& f, int q) {
    return orientation(points[static_cast<std::size_t>(f.v[0])], points[static_cast<std::size_t>(f.v[1])],
                       points[static_cast<std::size_t>(f.v[2])], points[static_cast<std::size_t>(q)]) > 0;
  };

  auto add_face = [&](int a, int b, int c) {
    HullFace f;
    f.v = {a, b, c};
    const Vec3& pa = points[static_cast<std::size_t>(a)];
    f.normal = (points[static_cast<std::size_t>(b)] - pa).cross(points[static_cast<std::size_t>(c)] - pa);
    const double len = f.normal.norm();
    if (len > 0.0) f.normal /= len;
    f.offset = f.normal.dot(pa);
    const int id = static_cast<int>(faces.size());
    for (int k = 0; k < 3; ++k) edge_face[edge_key(f.v[static_cast<std::size_t>(k)], f.v[static_cast<std::size_t>((k + 1) % 3)])] = id;
    faces.push_back(std::move(f));
    return id;
  };
  auto oriented = [&](int a, int b, int c, int opposite) {
    const std::size_t sa = static_cast<std::size_t>(a), sb = static_cast<std::size_t>(b);
    const std::size_t sc = static_cast<std::size_t>(c), so = static_cast<std::size_t>(opposite);
    if (orientation(points[sa], points[sb], points[sc], points[so]) > 0) std::swap(b, c);
    return add_face(a, b, c);
  };
  oriented(i0, i1, i2, i3);
  oriented(i0, i1, i3, i2);
  oriented(i0, i2, i3, i1);
  oriented(i1, i2, i3, i0);

  std::vector<char> on_hull(static_cast<std::size_t>(n), 0);
  for (int idx : {i0, i1, i2, i3}) on_hull[static_cast<std::size_t>(idx)] = 1;
  for (int i = 0; i < n; ++i) {
    if (on_hull[static_cast<std::size_t>(i)]) continue;
    for (int f = 0; f < 4; ++f) {
      if (above(faces[static_cast<std::size_t>(f)], i)) {
        faces[static_cast<std::size_t>(f)].outside.push_back(i);
        break;
      }
    }
  }

  std::vector<int> pending{0, 1, 2, 3};
  std::vector<int> visited_stamp;
  int stamp = 0;
  while (!pending.empty()) {
    const int fid = pending.back();
    pending.pop_back();
    if (!faces[static_cast<std::size_t>(fid)].alive || faces[static_cast<std::size_t>(fid)].outside.empty()) continue;

    int apex = -1;
    double far = -1.0;
    for (int q : faces[static_cast<std::size_t>(fid)].outside) {
      const double d = faces[static_cast<std::size_t>(fid)].distance(points[static_cast<std::size_t>(q)]);
      if (d > far) {
        far = d;
        apex = q;
      }
    }

    ++stamp;
    visited_stamp.resize(faces.size(), 0);
    std::vector<int> visible{fid};
    visited_stamp[static_cast<std::size_t>(fid)] = stamp;
    std::vector<std::pair<int, int>> horizon;
    for (std::size_t qi = 0; qi < visible.size(); ++qi) {
      const HullFace& g = faces[static_cast<std::size_t>(visible[qi])];
      for (int k = 0; k < 3; ++k) {
        const int a = g.v[static_cast<std::size_t>(k)];
        const int b = g.v[static_cast<std::size_t>((k + 1) % 3)];
        auto it = edge_face.find(edge_key(b, a));
        if (it == edge_face.end()) throw Error(ErrorKind::kInternal, "convex hull lost an edge twin");
        const int h = it->second;
        if (visited_stamp[static_cast<std::size_t>(h)] == stamp) continue;
        if (above(faces[static_cast<std::size_t>(h)], apex)) {
          visited_stamp[static_cast<std::size_t>(h)] = stamp;
          visible.push_back(h);
        } else {
          horizon.emplace_back(a, b);
        }
      }
    }
    // Horizon edges whose far face was later marked visible are interior.
    std::vector<std::pair<int, int>> boundary;
    for (const auto& [a, b] : horizon) {
      const int h = edge_face.at(edge_key(b, a));
      if (visited_stamp[static_cast<std::size_t>(h)] != stamp) boundary.emplace_back(a, b);
    }

    std::vector<int> orphans;
    for (int vid : visible) {
      HullFace& g = faces[static_cast<std::size_t>(vid)];
      g.alive = false;
      for (int q : g.outside) {
        if (q != apex) orphans.push_back(q);
      }
      g.outside.clear();
      for (int k = 0; k < 3; ++k) {
        const auto key = edge_key(g.v[static_cast<std::size_t>(k)], g.v[static_cast<std::size_t>((k + 1) % 3)]);
        auto it = edge_face.find(key);
        if (it != edge_face.end() && it->second == vid) edge_face.erase(it);
      }
    }
    std::vector<int> created;
    for (const auto& [a, b] : boundary) created.push_back(add_face(a, b, apex));
    std::sort(orphans.begin(), orphans.end());
    for (int q : orphans) {
      for (int nf : created) {
        if (above(faces[static_cast<std::size_t>(nf)], q)) {
          faces[static_cast<std::size_t>(nf)].outside.push_back(q);
          break;
        }
      }
    }
    for (int nf : created) {
      if (!faces[static_cast<std::size_t>(nf)].outside.empty()) pending.push_back(nf);
    }
  }

  std::vector<std::array<int, 3>> out;
  for (const HullFace& f : faces) {
    if (f.alive) out.push_back(f.v);
  }
  return out;
}

}  // namespace prepline::detail
