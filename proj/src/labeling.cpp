#include "prepline/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <queue>
#include <sstream>
#include <tuple>

#include "prepline/error.hpp"

namespace prepline {

MarginPoints extract_margin_points(const TriangleMesh& crown_bottom) {
  const auto loops = extract_boundary_loops(crown_bottom);
  if (loops.empty()) {
    throw Error(ErrorKind::kNoBoundary, "crown bottom is closed: no boundary loop to take the margin from");
  }
  MarginPoints out;
  for (int v : loops.front().vertices) out.points.push_back(crown_bottom.vertex(v));
  for (std::size_t i = 1; i < loops.size(); ++i) {
    std::ostringstream msg;
    msg << "ignored boundary loop " << i << " (" << loops[i].vertices.size() << " vertices, length "
        << loops[i].length << " mm); the longest loop (" << loops.front().length << " mm) is the margin";
    out.warnings.push_back(msg.str());
  }
  return out;
}

std::vector<int> map_margin_faces(const SurfaceIndex& die_index, std::span<const Vec3> margin_points,
                                  double max_distance) {
  std::vector<int> faces;
  faces.reserve(margin_points.size());
  for (std::size_t i = 0; i < margin_points.size(); ++i) {
    const ClosestPoint cp = die_index.closest_point(margin_points[i]);
    if (cp.distance > max_distance) {
      std::ostringstream msg;
      msg << "margin point " << i << " is " << cp.distance << " mm from the die surface (limit " << max_distance
          << " mm); crown bottom and die are not in the same frame";
      throw Error(ErrorKind::kAlignment, msg.str());
    }
    faces.push_back(cp.face);
  }
  std::sort(faces.begin(), faces.end());
  faces.erase(std::unique(faces.begin(), faces.end()), faces.end());
  if (faces.empty()) throw Error(ErrorKind::kNoBoundary, "no margin points to map");
  return faces;
}

std::vector<int> map_margin_faces(const TriangleMesh& die, std::span<const Vec3> margin_points,
                                  double max_distance) {
  return map_margin_faces(SurfaceIndex(die), margin_points, max_distance);
}

namespace {

// Margin faces that are close in space but far apart (or unreachable) when
// walking between margin faces that share a vertex: those are the holes.
std::string describe_gaps(const TriangleMesh& die, const std::vector<int>& margin) {
  const std::size_t m = margin.size();
  std::vector<std::vector<int>> by_vertex(die.num_vertices());
  for (std::size_t i = 0; i < m; ++i) {
    for (int v : die.face(margin[i])) by_vertex[static_cast<std::size_t>(v)].push_back(static_cast<int>(i));
  }
  std::vector<std::vector<int>> graph(m);
  for (const auto& group : by_vertex) {
    for (int a : group) {
      for (int b : group) {
        if (a != b) graph[static_cast<std::size_t>(a)].push_back(b);
      }
    }
  }
  constexpr int kFarHops = 8;
  const double near = 4.0 * die.mean_edge_length();
  struct Gap {
    double distance;
    int a;
    int b;
  };
  std::vector<Gap> candidates;
  std::vector<int> hops(m);
  for (std::size_t s = 0; s < m; ++s) {
    std::fill(hops.begin(), hops.end(), -1);
    std::queue<int> q;
    hops[s] = 0;
    q.push(static_cast<int>(s));
    while (!q.empty()) {
      const int x = q.front();
      q.pop();
      if (hops[static_cast<std::size_t>(x)] >= kFarHops) continue;
      for (int y : graph[static_cast<std::size_t>(x)]) {
        if (hops[static_cast<std::size_t>(y)] < 0) {
          hops[static_cast<std::size_t>(y)] = hops[static_cast<std::size_t>(x)] + 1;
          q.push(y);
        }
      }
    }
    for (std::size_t t = s + 1; t < m; ++t) {
      if (hops[t] >= 0) continue;
      const double d = (die.barycenter(margin[s]) - die.barycenter(margin[t])).norm();
      if (d <= near) candidates.push_back({d, static_cast<int>(s), static_cast<int>(t)});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Gap& x, const Gap& y) {
    return std::tie(x.distance, x.a, x.b) < std::tie(y.distance, y.a, y.b);
  });
  std::vector<Gap> gaps;
  for (const Gap& c : candidates) {
    bool duplicate = false;
    for (const Gap& g : gaps) {
      const Vec3 mid_c = die.barycenter(margin[static_cast<std::size_t>(c.a)]) + die.barycenter(margin[static_cast<std::size_t>(c.b)]);
      const Vec3 mid_g = die.barycenter(margin[static_cast<std::size_t>(g.a)]) + die.barycenter(margin[static_cast<std::size_t>(g.b)]);
      if (0.5 * (mid_c - mid_g).norm() <= near) duplicate = true;
    }
    if (!duplicate) gaps.push_back(c);
    if (gaps.size() == 8) break;
  }
  std::ostringstream msg;
  if (gaps.empty()) {
    msg << "no local gap found; the margin faces do not encircle the die";
    return msg.str();
  }
  msg << gaps.size() << " gap(s):";
  for (const Gap& g : gaps) {
    const int fa = margin[static_cast<std::size_t>(g.a)];
    const int fb = margin[static_cast<std::size_t>(g.b)];
    const Vec3 mid = 0.5 * (die.barycenter(fa) + die.barycenter(fb));
    char buf[160];
    std::snprintf(buf, sizeof(buf), " [faces %d-%d, %.3f mm apart, near (%.3f, %.3f, %.3f)]", fa, fb, g.distance,
                  mid.x(), mid.y(), mid.z());
    msg << buf;
  }
  return msg.str();
}

}  // namespace

RegionSplit split_regions(const TriangleMesh& die, std::span<const int> margin_faces, const SplitOptions& options) {
  const FaceAdjacency adjacency(die);
  const std::size_t nf = die.num_faces();
  const std::vector<double> areas = die.face_areas();
  const double total_area = std::accumulate(areas.begin(), areas.end(), 0.0);

  std::vector<char> in_margin(nf, 0);
  for (int f : margin_faces) {
    if (f < 0 || static_cast<std::size_t>(f) >= nf) throw Error(ErrorKind::kValidation, "margin face id out of range");
    in_margin[static_cast<std::size_t>(f)] = 1;
  }

  RegionSplit out;
  for (int ring = 0;; ++ring) {
    std::vector<int> rest;
    for (std::size_t f = 0; f < nf; ++f) {
      if (!in_margin[f]) rest.push_back(static_cast<int>(f));
    }
    const auto comps = connected_components(rest, adjacency);
    std::vector<std::size_t> regions;
    for (std::size_t c = 0; c < comps.size(); ++c) {
      double a = 0.0;
      for (int f : comps[c]) a += areas[static_cast<std::size_t>(f)];
      if (a >= options.min_region_fraction * total_area) regions.push_back(c);
    }
    if (regions.size() >= 2) {
      std::size_t best = regions.front();
      double best_z = -1e300;
      for (std::size_t c : regions) {
        double a = 0.0;
        double z = 0.0;
        for (int f : comps[c]) {
          a += areas[static_cast<std::size_t>(f)];
          z += areas[static_cast<std::size_t>(f)] * die.barycenter(f).z();
        }
        z /= a;
        if (z > best_z) {
          best_z = z;
          best = c;
        }
      }
      out.labeled.mesh = die;
      out.labeled.labels.assign(nf, 0);
      for (std::size_t f = 0; f < nf; ++f) {
        if (in_margin[f]) {
          out.labeled.labels[f] = 1;
          out.margin_faces.push_back(static_cast<int>(f));
        }
      }
      for (int f : comps[best]) out.labeled.labels[static_cast<std::size_t>(f)] = 1;
      out.dilation_rings = ring;
      if (ring > 0) {
        out.warnings.push_back("margin gaps healed by " + std::to_string(ring) + " ring(s) of dilation");
      }
      return out;
    }
    if (ring == options.max_dilation) {
      std::vector<int> original(margin_faces.begin(), margin_faces.end());
      std::sort(original.begin(), original.end());
      original.erase(std::unique(original.begin(), original.end()), original.end());
      throw Error(ErrorKind::kIncompleteMargin,
                  "margin faces do not split the die after " + std::to_string(ring) +
                      " dilation ring(s): " + describe_gaps(die, original));
    }
    std::vector<char> grown = in_margin;
    for (std::size_t f = 0; f < nf; ++f) {
      if (!in_margin[f]) continue;
      for (int g : adjacency.neighbors(static_cast<int>(f))) grown[static_cast<std::size_t>(g)] = 1;
    }
    in_margin = std::move(grown);
  }
}

std::vector<Vec3> densify_loop(std::span<const Vec3> loop, double max_spacing) {
  if (!(max_spacing > 0.0)) throw Error(ErrorKind::kValidation, "densify spacing must be positive");
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const Vec3& a = loop[i];
    const Vec3& b = loop[(i + 1) % loop.size()];
    const int pieces = std::max(1, static_cast<int>(std::ceil((b - a).norm() / max_spacing)));
    for (int k = 0; k < pieces; ++k) out.push_back(a + (b - a) * (static_cast<double>(k) / pieces));
  }
  return out;
}

RegionSplit label_die(const TriangleMesh& die, const TriangleMesh& crown_bottom, const SplitOptions& options) {
  const MarginPoints margin = extract_margin_points(crown_bottom);
  const std::vector<Vec3> dense = densify_loop(margin.points, 0.5 * die.mean_edge_length());
  const std::vector<int> faces = map_margin_faces(die, dense);
  RegionSplit out = split_regions(die, faces, options);
  out.warnings.insert(out.warnings.begin(), margin.warnings.begin(), margin.warnings.end());
  return out;
}

std::vector<int> transfer_labels(const LabeledMesh& source, const TriangleMesh& target) {
  if (source.labels.size() != source.mesh.num_faces()) {
    throw Error(ErrorKind::kValidation, "source labels do not match the source mesh");
  }
  const SurfaceIndex index(source.mesh);
  std::vector<int> out(target.num_faces());
  for (std::size_t f = 0; f < out.size(); ++f) {
    out[f] = source.labels[static_cast<std::size_t>(index.closest_point(target.barycenter(static_cast<int>(f))).face)];
  }
  return out;
}

}  // namespace prepline
