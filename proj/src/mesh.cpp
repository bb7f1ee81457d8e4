#include "prepline/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>

#include "prepline/error.hpp"

namespace prepline {

TriangleMesh::TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  if (faces_.empty()) throw Error(ErrorKind::kEmptyMesh, "mesh has no faces");
  const int nv = static_cast<int>(vertices_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const Face& t = faces_[f];
    for (int v : t) {
      if (v < 0 || v >= nv) {
        std::ostringstream msg;
        msg << "face " << f << " references vertex " << v << " (vertex count " << nv << ")";
        throw Error(ErrorKind::kTopology, msg.str());
      }
    }
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
      std::ostringstream msg;
      msg << "face " << f << " repeats a vertex index";
      throw Error(ErrorKind::kTopology, msg.str());
    }
  }
}

Vec3 TriangleMesh::face_normal(int f) const {
  const Face& t = face(f);
  const Vec3 n = (vertex(t[1]) - vertex(t[0])).cross(vertex(t[2]) - vertex(t[0]));
  const double len = n.norm();
  if (len == 0.0) return Vec3::Zero();
  return n / len;
}

Vec3 TriangleMesh::barycenter(int f) const {
  const Face& t = face(f);
  return (vertex(t[0]) + vertex(t[1]) + vertex(t[2])) / 3.0;
}

double TriangleMesh::face_area(int f) const {
  const Face& t = face(f);
  return 0.5 * (vertex(t[1]) - vertex(t[0])).cross(vertex(t[2]) - vertex(t[0])).norm();
}

std::vector<Vec3> TriangleMesh::face_normals() const {
  std::vector<Vec3> out(faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) out[f] = face_normal(static_cast<int>(f));
  return out;
}

std::vector<Vec3> TriangleMesh::barycenters() const {
  std::vector<Vec3> out(faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) out[f] = barycenter(static_cast<int>(f));
  return out;
}

std::vector<double> TriangleMesh::face_areas() const {
  std::vector<double> out(faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) out[f] = face_area(static_cast<int>(f));
  return out;
}

std::vector<Vec3> TriangleMesh::vertex_normals() const {
  std::vector<Vec3> acc(vertices_.size(), Vec3::Zero());
  for (const Face& t : faces_) {
    // Unnormalized cross product is area-weighted.
    const Vec3 n = (vertex(t[1]) - vertex(t[0])).cross(vertex(t[2]) - vertex(t[0]));
    for (int v : t) acc[static_cast<std::size_t>(v)] += n;
  }
  for (Vec3& n : acc) {
    const double len = n.norm();
    if (len > 0.0) n /= len;
  }
  return acc;
}

double TriangleMesh::bounding_box_diagonal() const {
  if (vertices_.empty()) return 0.0;
  Vec3 lo = vertices_.front();
  Vec3 hi = vertices_.front();
  for (const Vec3& p : vertices_) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

double TriangleMesh::mean_edge_length() const {
  // Unique undirected edges.
  std::vector<std::pair<int, int>> edges;
  edges.reserve(faces_.size() * 3);
  for (const Face& t : faces_) {
    for (int k = 0; k < 3; ++k) {
      const int a = t[static_cast<std::size_t>(k)];
      const int b = t[static_cast<std::size_t>((k + 1) % 3)];
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  double sum = 0.0;
  for (const auto& [a, b] : edges) sum += (vertex(a) - vertex(b)).norm();
  return edges.empty() ? 0.0 : sum / static_cast<double>(edges.size());
}

double TriangleMesh::max_edge_length() const {
  double best = 0.0;
  for (const Face& t : faces_) {
    for (int k = 0; k < 3; ++k) {
      best = std::max(best, (vertex(t[static_cast<std::size_t>(k)]) -
                             vertex(t[static_cast<std::size_t>((k + 1) % 3)]))
                                .norm());
    }
  }
  return best;
}

TriangleMesh TriangleMesh::transformed(const Eigen::Matrix3d& rotation,
                                       const Vec3& translation) const {
  TriangleMesh out = *this;
  for (Vec3& p : out.vertices_) p = rotation * p + translation;
  return out;
}

// ---------------------------------------------------------------------------

FaceAdjacency::FaceAdjacency(const TriangleMesh& mesh) {
  const std::size_t nf = mesh.num_faces();
  struct HalfRecord {
    int v0, v1, face, local;
  };
  std::vector<HalfRecord> records;
  records.reserve(nf * 3);
  for (std::size_t f = 0; f < nf; ++f) {
    const Face& t = mesh.face(static_cast<int>(f));
    for (int k = 0; k < 3; ++k) {
      const int a = t[static_cast<std::size_t>(k)];
      const int b = t[static_cast<std::size_t>((k + 1) % 3)];
      records.push_back({std::min(a, b), std::max(a, b), static_cast<int>(f), k});
    }
  }
  std::sort(records.begin(), records.end(), [](const HalfRecord& x, const HalfRecord& y) {
    if (x.v0 != y.v0) return x.v0 < y.v0;
    if (x.v1 != y.v1) return x.v1 < y.v1;
    return x.face < y.face;
  });

  face_edges_.assign(nf, {-1, -1, -1});
  for (std::size_t i = 0; i < records.size();) {
    std::size_t j = i;
    while (j < records.size() && records[j].v0 == records[i].v0 && records[j].v1 == records[i].v1) ++j;
    if (j - i > 2) {
      std::ostringstream msg;
      msg << "non-manifold edge (" << records[i].v0 << ", " << records[i].v1 << ") has "
          << (j - i) << " incident faces";
      throw Error(ErrorKind::kTopology, msg.str());
    }
    MeshEdge e;
    e.v0 = records[i].v0;
    e.v1 = records[i].v1;
    e.faces[0] = records[i].face;
    if (j - i == 2) e.faces[1] = records[i + 1].face;
    const int id = static_cast<int>(edges_.size());
    for (std::size_t r = i; r < j; ++r) {
      face_edges_[static_cast<std::size_t>(records[r].face)][static_cast<std::size_t>(records[r].local)] = id;
    }
    edges_.push_back(e);
    i = j;
  }

  neighbor_offsets_.assign(nf + 1, 0);
  for (std::size_t f = 0; f < nf; ++f) {
    int count = 0;
    for (int k = 0; k < 3; ++k) {
      if (across(static_cast<int>(f), k) >= 0) ++count;
    }
    neighbor_offsets_[f + 1] = neighbor_offsets_[f] + count;
  }
  neighbor_list_.resize(static_cast<std::size_t>(neighbor_offsets_[nf]));
  for (std::size_t f = 0; f < nf; ++f) {
    int pos = neighbor_offsets_[f];
    for (int k = 0; k < 3; ++k) {
      const int g = across(static_cast<int>(f), k);
      if (g >= 0) neighbor_list_[static_cast<std::size_t>(pos++)] = g;
    }
  }
}

int FaceAdjacency::across(int f, int k) const {
  const MeshEdge& e = edges_[static_cast<std::size_t>(face_edge(f, k))];
  if (e.faces[1] < 0) return -1;
  return e.faces[0] == f ? e.faces[1] : e.faces[0];
}

std::span<const int> FaceAdjacency::neighbors(int f) const {
  const auto begin = static_cast<std::size_t>(neighbor_offsets_[static_cast<std::size_t>(f)]);
  const auto end = static_cast<std::size_t>(neighbor_offsets_[static_cast<std::size_t>(f) + 1]);
  return std::span<const int>(neighbor_list_).subspan(begin, end - begin);
}

// ---------------------------------------------------------------------------

std::vector<BoundaryLoop> extract_boundary_loops(const TriangleMesh& mesh) {
  return extract_boundary_loops(mesh, FaceAdjacency(mesh));
}

std::vector<BoundaryLoop> extract_boundary_loops(const TriangleMesh& mesh,
                                                 const FaceAdjacency& adjacency) {
  // Directed boundary half-edges, oriented as in their single face.
  struct Half {
    int from, to;
  };
  std::vector<Half> halves;
  for (const MeshEdge& e : adjacency.edges()) {
    if (!e.is_boundary()) continue;
    const Face& t = mesh.face(e.faces[0]);
    Half h{e.v0, e.v1};
    for (int k = 0; k < 3; ++k) {
      if (t[static_cast<std::size_t>(k)] == e.v1 && t[static_cast<std::size_t>((k + 1) % 3)] == e.v0) {
        h = {e.v1, e.v0};
      }
    }
    halves.push_back(h);
  }
  if (halves.empty()) return {};

  // Vertex -> incident boundary half-edge ids (both directions).
  std::vector<std::vector<int>> incident(mesh.num_vertices());
  for (std::size_t i = 0; i < halves.size(); ++i) {
    incident[static_cast<std::size_t>(halves[i].from)].push_back(static_cast<int>(i));
    incident[static_cast<std::size_t>(halves[i].to)].push_back(static_cast<int>(i));
  }

  std::vector<char> used(halves.size(), 0);
  std::vector<BoundaryLoop> loops;
  for (std::size_t start = 0; start < halves.size(); ++start) {
    if (used[start]) continue;
    BoundaryLoop loop;
    used[start] = 1;
    const int origin = halves[start].from;
    int current = halves[start].to;
    loop.vertices.push_back(origin);
    loop.length += (mesh.vertex(origin) - mesh.vertex(current)).norm();
    while (current != origin) {
      loop.vertices.push_back(current);
      int next_edge = -1;
      // Prefer a consistently oriented continuation; fall back to any unused edge.
      for (int id : incident[static_cast<std::size_t>(current)]) {
        if (!used[static_cast<std::size_t>(id)] && halves[static_cast<std::size_t>(id)].from == current) {
          next_edge = id;
          break;
        }
      }
      if (next_edge < 0) {
        for (int id : incident[static_cast<std::size_t>(current)]) {
          if (!used[static_cast<std::size_t>(id)]) {
            next_edge = id;
            break;
          }
        }
      }
      if (next_edge < 0) {
        std::ostringstream msg;
        msg << "boundary chain does not close at vertex " << current;
        throw Error(ErrorKind::kTopology, msg.str());
      }
      used[static_cast<std::size_t>(next_edge)] = 1;
      const Half& h = halves[static_cast<std::size_t>(next_edge)];
      const int next = h.from == current ? h.to : h.from;
      loop.length += (mesh.vertex(current) - mesh.vertex(next)).norm();
      current = next;
    }
    loops.push_back(std::move(loop));
  }
  std::stable_sort(loops.begin(), loops.end(), [](const BoundaryLoop& a, const BoundaryLoop& b) {
    return a.length > b.length;
  });
  return loops;
}

std::vector<std::vector<int>> connected_components(std::span<const int> face_subset,
                                                   const FaceAdjacency& adjacency) {
  const std::size_t nf = adjacency.num_faces();
  std::vector<char> in_subset(nf, 0);
  for (int f : face_subset) in_subset[static_cast<std::size_t>(f)] = 1;
  std::vector<char> seen(nf, 0);
  std::vector<int> ordered(face_subset.begin(), face_subset.end());
  std::sort(ordered.begin(), ordered.end());

  std::vector<std::vector<int>> components;
  std::queue<int> frontier;
  for (int seed : ordered) {
    if (seen[static_cast<std::size_t>(seed)]) continue;
    std::vector<int> comp;
    seen[static_cast<std::size_t>(seed)] = 1;
    frontier.push(seed);
    while (!frontier.empty()) {
      const int f = frontier.front();
      frontier.pop();
      comp.push_back(f);
      for (int g : adjacency.neighbors(f)) {
        const auto gi = static_cast<std::size_t>(g);
        if (in_subset[gi] && !seen[gi]) {
          seen[gi] = 1;
          frontier.push(g);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    components.push_back(std::move(comp));
  }
  std::stable_sort(components.begin(), components.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return components;
}

}  // namespace prepline
