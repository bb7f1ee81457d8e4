#include "prepline/synth.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "prepline/error.hpp"

namespace prepline::synth {
namespace {

constexpr double kPi = std::numbers::pi;

// Keeps only referenced vertices, preserving order.
TriangleMesh compact(const std::vector<Vec3>& vertices, const std::vector<Face>& faces) {
  std::vector<int> remap(vertices.size(), -1);
  std::vector<Vec3> out_vertices;
  std::vector<Face> out_faces = faces;
  for (Face& t : out_faces) {
    for (int& v : t) {
      int& slot = remap[static_cast<std::size_t>(v)];
      if (slot < 0) {
        slot = static_cast<int>(out_vertices.size());
        out_vertices.push_back(vertices[static_cast<std::size_t>(v)]);
      }
      v = slot;
    }
  }
  return TriangleMesh(std::move(out_vertices), std::move(out_faces));
}

// Triangulates a stack of rings (each `segments` long). A ring of size 1 is an
// apex. Faces are oriented so that a profile running upward and outward
// produces outward normals.
void stitch_rings(int ring_a, int ring_b, int segments, bool b_is_apex,
                  std::vector<Face>& faces, std::vector<int>* face_ring, int ring_index) {
  for (int j = 0; j < segments; ++j) {
    const int jn = (j + 1) % segments;
    const int a = ring_a + j;
    const int b = ring_a + jn;
    if (b_is_apex) {
      faces.push_back({a, b, ring_b});
      if (face_ring) face_ring->push_back(ring_index);
      continue;
    }
    const int c = ring_b + jn;
    const int d = ring_b + j;
    faces.push_back({a, b, c});
    faces.push_back({a, c, d});
    if (face_ring) {
      face_ring->push_back(ring_index);
      face_ring->push_back(ring_index);
    }
  }
}

}  // namespace

TriangleMesh icosphere(int subdivisions, double radius) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (Vec3& p : v) p.normalize();
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                         {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                         {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                         {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::make_pair(std::min(a, b), std::max(a, b));
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      const int id = static_cast<int>(v.size());
      v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const Face& tri : f) {
      const int a = mid(tri[0], tri[1]);
      const int b = mid(tri[1], tri[2]);
      const int c = mid(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  for (Vec3& p : v) p *= radius;
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh cylinder(int segments, int rings, double radius, double height) {
  if (segments < 3 || rings < 2) throw Error(ErrorKind::kValidation, "cylinder needs >= 3 segments and >= 2 rings");
  std::vector<Vec3> v;
  for (int r = 0; r < rings; ++r) {
    const double z = height * r / (rings - 1);
    for (int s = 0; s < segments; ++s) {
      const double a = 2.0 * kPi * s / segments;
      v.emplace_back(radius * std::cos(a), radius * std::sin(a), z);
    }
  }
  std::vector<Face> f;
  for (int r = 0; r + 1 < rings; ++r) stitch_rings(r * segments, (r + 1) * segments, segments, false, f, nullptr, r);
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh grid(int n, double size) {
  std::vector<Vec3> v;
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      v.emplace_back(size * (static_cast<double>(j) / n - 0.5), size * (static_cast<double>(i) / n - 0.5), 0.0);
    }
  }
  std::vector<Face> f;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int a = i * (n + 1) + j;
      const int b = a + 1;
      const int c = a + n + 2;
      const int d = a + n + 1;
      f.push_back({a, b, c});
      f.push_back({a, c, d});
    }
  }
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh box(const Vec3& extents) {
  const Vec3 h = extents / 2.0;
  std::vector<Vec3> v;
  for (int i = 0; i < 8; ++i) {
    v.emplace_back((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z());
  }
  std::vector<Face> f = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                         {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh hemisphere(int segments, int rings, double radius, bool puncture_pole) {
  std::vector<Vec3> v;
  for (int r = 0; r < rings; ++r) {
    const double phi = 0.5 * kPi * r / rings;  // elevation
    for (int s = 0; s < segments; ++s) {
      const double a = 2.0 * kPi * s / segments;
      v.emplace_back(radius * std::cos(phi) * std::cos(a), radius * std::cos(phi) * std::sin(a),
                     radius * std::sin(phi));
    }
  }
  const int apex = static_cast<int>(v.size());
  v.emplace_back(0.0, 0.0, radius);
  std::vector<Face> f;
  for (int r = 0; r + 1 < rings; ++r) stitch_rings(r * segments, (r + 1) * segments, segments, false, f, nullptr, r);
  if (!puncture_pole) stitch_rings((rings - 1) * segments, apex, segments, true, f, nullptr, rings - 1);
  return compact(v, f);
}

// ---------------------------------------------------------------------------

Vec3 SyntheticDie::crease_point(double theta) const {
  const DieParameters& p = params;
  const double scale = 1.0 + p.modulation * std::cos(2.0 * theta + p.modulation_phase);
  const double r = p.base_radius * scale;
  return {r * std::cos(theta), r * p.ellipticity * std::sin(theta),
          p.wall_height + p.margin_tilt * std::cos(theta)};
}

std::vector<Vec3> SyntheticDie::crease_samples(int count) const {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(crease_point(2.0 * kPi * i / count));
  return out;
}

SyntheticDie frustum_die(const DieParameters& p) {
  const double shoulder_inner = p.base_radius - p.shoulder_width;
  const double top_outer = shoulder_inner * p.top_radius_ratio;
  if (shoulder_inner <= 0 || top_outer <= p.fillet_radius || p.wall_height - std::abs(p.margin_tilt) <= 0) {
    throw Error(ErrorKind::kValidation, "inconsistent die parameters");
  }
  auto count = [&](double length) { return std::max(2, static_cast<int>(std::ceil(length / p.spacing))); };
  const int n_wall = count(p.wall_height);
  const int n_ledge = count(p.shoulder_width);
  const double top_z = p.wall_height + p.frustum_height;
  const int n_frustum = count(std::hypot(shoulder_inner - top_outer, p.frustum_height));

  // Fillet geometry from the nominal frustum direction so the top is flat.
  const Eigen::Vector2d dir = Eigen::Vector2d(top_outer - shoulder_inner, p.frustum_height).normalized();
  const Eigen::Vector2d center = Eigen::Vector2d(top_outer, top_z) + p.fillet_radius * Eigen::Vector2d(-dir.y(), dir.x());
  const double phi0 = std::atan2(-dir.x(), dir.y());
  const int n_fillet = count(p.fillet_radius * (0.5 * kPi - phi0));
  const int n_top = count(center.x());

  struct ProfilePoint {
    double r, z;
  };
  auto profile = [&](double theta) {
    std::vector<ProfilePoint> pts;
    const double zc = p.wall_height + p.margin_tilt * std::cos(theta);
    for (int i = 0; i <= n_wall; ++i) pts.push_back({p.base_radius, zc * i / n_wall});
    for (int i = 1; i <= n_ledge; ++i) {
      pts.push_back({p.base_radius - p.shoulder_width * i / n_ledge, zc});
    }
    for (int i = 1; i <= n_frustum; ++i) {
      const double s = static_cast<double>(i) / n_frustum;
      pts.push_back({shoulder_inner + s * (top_outer - shoulder_inner), zc + s * (top_z - zc)});
    }
    for (int i = 1; i <= n_fillet; ++i) {
      const double phi = phi0 + (0.5 * kPi - phi0) * i / n_fillet;
      pts.push_back({center.x() + p.fillet_radius * std::cos(phi), center.y() + p.fillet_radius * std::sin(phi)});
    }
    const double flat_z = center.y() + p.fillet_radius;
    for (int i = 1; i < n_top; ++i) pts.push_back({center.x() * (1.0 - static_cast<double>(i) / n_top), flat_z});
    return pts;
  };

  const int rings = static_cast<int>(profile(0.0).size());
  const int crease_ring = n_wall;
  std::vector<Vec3> v;
  v.resize(static_cast<std::size_t>(rings * p.segments));
  double flat_z = 0.0;
  for (int j = 0; j < p.segments; ++j) {
    const double theta = 2.0 * kPi * j / p.segments;
    const double scale = 1.0 + p.modulation * std::cos(2.0 * theta + p.modulation_phase);
    const auto pts = profile(theta);
    for (int r = 0; r < rings; ++r) {
      const double rad = pts[static_cast<std::size_t>(r)].r * scale;
      v[static_cast<std::size_t>(r * p.segments + j)] =
          Vec3(rad * std::cos(theta), rad * p.ellipticity * std::sin(theta), pts[static_cast<std::size_t>(r)].z);
    }
    flat_z = pts.back().z;
  }
  const int apex = static_cast<int>(v.size());
  v.emplace_back(0.0, 0.0, flat_z);

  std::vector<Face> faces;
  std::vector<int> face_ring;
  for (int r = 0; r + 1 < rings; ++r) {
    stitch_rings(r * p.segments, (r + 1) * p.segments, p.segments, false, faces, &face_ring, r);
  }
  stitch_rings((rings - 1) * p.segments, apex, p.segments, true, faces, &face_ring, rings - 1);

  SyntheticDie out;
  out.params = p;
  out.crown_labels.resize(faces.size());
  std::vector<Face> crown_faces;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const bool above = face_ring[f] >= crease_ring;
    out.crown_labels[f] = above ? 1 : 0;
    if (above) crown_faces.push_back(faces[f]);
  }
  out.crown_bottom = compact(v, crown_faces);
  out.die = TriangleMesh(std::move(v), std::move(faces));
  return out;
}

DieParameters random_die_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  DieParameters p;
  p.base_radius = uniform(4.6, 5.4);
  p.ellipticity = uniform(0.84, 0.92);
  p.wall_height = uniform(1.0, 1.4);
  p.margin_tilt = uniform(-0.35, 0.35);
  p.modulation = uniform(0.0, 0.05);
  p.modulation_phase = uniform(0.0, 2.0 * kPi);
  p.shoulder_width = uniform(0.7, 1.0);
  p.frustum_height = uniform(1.8, 2.2);
  p.top_radius_ratio = uniform(0.5, 0.6);
  p.fillet_radius = uniform(0.8, 1.1);
  return p;
}

}  // namespace prepline::synth
