#include "prepline/features.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "prepline/error.hpp"
#include "prepline/spatial.hpp"

namespace prepline {

std::vector<double> raw_mean_curvature(const TriangleMesh& mesh, std::vector<std::string>* warnings) {
  const std::size_t nv = mesh.num_vertices();
  std::vector<Vec3> laplace(nv, Vec3::Zero());
  std::vector<double> area(nv, 0.0);
  std::size_t degenerate = 0;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    const Face& t = mesh.face(static_cast<int>(f));
    const std::array<Vec3, 3> p{mesh.vertex(t[0]), mesh.vertex(t[1]), mesh.vertex(t[2])};
    const double double_area = (p[1] - p[0]).cross(p[2] - p[0]).norm();
    const double scale = std::max({(p[1] - p[0]).squaredNorm(), (p[2] - p[1]).squaredNorm(), (p[0] - p[2]).squaredNorm()});
    if (!(double_area > 1e-12 * scale)) {
      ++degenerate;
      continue;
    }
    std::array<double, 3> cot{};
    for (int k = 0; k < 3; ++k) {
      const Vec3 u = p[static_cast<std::size_t>((k + 1) % 3)] - p[static_cast<std::size_t>(k)];
      const Vec3 v = p[static_cast<std::size_t>((k + 2) % 3)] - p[static_cast<std::size_t>(k)];
      cot[static_cast<std::size_t>(k)] = u.dot(v) / double_area;
    }
    // Edge opposite vertex k joins k+1 and k+2.
    for (int k = 0; k < 3; ++k) {
      const int a = (k + 1) % 3;
      const int b = (k + 2) % 3;
      const Vec3 d = p[static_cast<std::size_t>(a)] - p[static_cast<std::size_t>(b)];
      laplace[static_cast<std::size_t>(t[static_cast<std::size_t>(a)])] += cot[static_cast<std::size_t>(k)] * d;
      laplace[static_cast<std::size_t>(t[static_cast<std::size_t>(b)])] -= cot[static_cast<std::size_t>(k)] * d;
    }
    // Mixed Voronoi area.
    const double tri_area = 0.5 * double_area;
    const bool obtuse = cot[0] < 0 || cot[1] < 0 || cot[2] < 0;
    for (int k = 0; k < 3; ++k) {
      const auto vk = static_cast<std::size_t>(t[static_cast<std::size_t>(k)]);
      if (!obtuse) {
        const int a = (k + 1) % 3;
        const int b = (k + 2) % 3;
        // Edge k->a is opposite b, edge k->b is opposite a.
        area[vk] += ((p[static_cast<std::size_t>(a)] - p[static_cast<std::size_t>(k)]).squaredNorm() * cot[static_cast<std::size_t>(b)] +
                     (p[static_cast<std::size_t>(b)] - p[static_cast<std::size_t>(k)]).squaredNorm() * cot[static_cast<std::size_t>(a)]) / 8.0;
      } else if (cot[static_cast<std::size_t>(k)] < 0) {
        area[vk] += tri_area / 2.0;
      } else {
        area[vk] += tri_area / 4.0;
      }
    }
  }
  if (degenerate > 0 && warnings) {
    warnings->push_back(std::to_string(degenerate) + " degenerate triangle(s) skipped in curvature");
  }
  const auto normals = mesh.vertex_normals();
  std::vector<double> h(nv, 0.0);
  for (std::size_t v = 0; v < nv; ++v) {
    if (area[v] <= 0.0) continue;
    const Vec3 k = laplace[v] / (2.0 * area[v]);
    const double mag = 0.5 * k.norm();
    h[v] = k.dot(normals[v]) >= 0.0 ? mag : -mag;
  }
  return h;
}

CurvatureResult compute_mean_curvature(const TriangleMesh& mesh, std::optional<double> radius) {
  CurvatureResult out;
  const std::vector<double> raw = raw_mean_curvature(mesh, &out.warnings);
  // A small relative margin keeps vertices exactly at the radius inside
  // regardless of rounding in the current pose.
  const double r = radius.value_or(mesh.max_edge_length()) * (1.0 + 1e-9);
  const KdTree tree(mesh.vertices());
  out.values.resize(raw.size());
  for (std::size_t v = 0; v < raw.size(); ++v) {
    const auto nbrs = tree.radius_search(mesh.vertex(static_cast<int>(v)), r);
    double sum = 0.0;
    for (int w : nbrs) sum += raw[static_cast<std::size_t>(w)];
    out.values[v] = nbrs.empty() ? raw[v] : sum / static_cast<double>(nbrs.size());
  }
  return out;
}

int feature_channels(const FeatureOptions& options) {
  return 6 + (options.include_vertex_coords ? 9 : 0) + (options.include_curvature ? 3 : 0);
}

CellFeatures assemble_features(const TriangleMesh& mesh, const FeatureOptions& options,
                               std::span<const double> vertex_curvature) {
  if (options.include_curvature && vertex_curvature.size() != mesh.num_vertices()) {
    throw Error(ErrorKind::kValidation, "curvature channels requested but per-vertex curvature was not supplied");
  }
  CellFeatures out;
  out.options = options;
  const auto nf = static_cast<Eigen::Index>(mesh.num_faces());
  out.values.resize(nf, feature_channels(options));
  for (Eigen::Index f = 0; f < nf; ++f) {
    const Face& t = mesh.face(static_cast<int>(f));
    Eigen::Index c = 0;
    if (options.include_vertex_coords) {
      for (int v : t) {
        out.values.block<1, 3>(f, c) = mesh.vertex(v).transpose();
        c += 3;
      }
    }
    out.values.block<1, 3>(f, c) = mesh.barycenter(static_cast<int>(f)).transpose();
    c += 3;
    out.values.block<1, 3>(f, c) = mesh.face_normal(static_cast<int>(f)).transpose();
    c += 3;
    if (options.include_curvature) {
      for (int v : t) out.values(f, c++) = vertex_curvature[static_cast<std::size_t>(v)];
    }
  }
  return out;
}

AdjacencyPair build_adjacency(std::span<const Vec3> barycenters, double radius_small, double radius_large) {
  if (!(radius_small > 0.0) || !(radius_large >= radius_small)) {
    throw Error(ErrorKind::kValidation, "adjacency radii must satisfy 0 < r_S <= r_L");
  }
  const auto n = static_cast<Eigen::Index>(barycenters.size());
  const KdTree tree(std::vector<Vec3>(barycenters.begin(), barycenters.end()));
  std::vector<Eigen::Triplet<double>> small_entries;
  std::vector<Eigen::Triplet<double>> large_entries;
  const double rs2 = radius_small * radius_small;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3& b = barycenters[static_cast<std::size_t>(i)];
    const auto nbrs = tree.radius_search(b, radius_large);
    std::vector<int> close;
    for (int j : nbrs) {
      if ((barycenters[static_cast<std::size_t>(j)] - b).squaredNorm() <= rs2) close.push_back(j);
    }
    // radius_search always contains i itself.
    for (int j : nbrs) large_entries.emplace_back(static_cast<int>(i), j, 1.0 / static_cast<double>(nbrs.size()));
    for (int j : close) small_entries.emplace_back(static_cast<int>(i), j, 1.0 / static_cast<double>(close.size()));
  }
  AdjacencyPair out;
  out.radius_small = radius_small;
  out.radius_large = radius_large;
  out.small.resize(n, n);
  out.large.resize(n, n);
  out.small.setFromTriplets(small_entries.begin(), small_entries.end());
  out.large.setFromTriplets(large_entries.begin(), large_entries.end());
  out.small.makeCompressed();
  out.large.makeCompressed();
  return out;
}

namespace {

constexpr char kMagic[8] = {'P', 'L', 'F', 'E', 'A', 'T', '1', '\0'};

template <typename T>
void put(std::string& out, const T& value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) {
    throw Error(ErrorKind::kParse, "feature container truncated at byte offset " + std::to_string(pos));
  }
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

void put_sparse(std::string& out, const SparseMatrix& m) {
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.nonZeros()));
  for (Eigen::Index r = 0; r < m.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(it.row()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(it.col()));
      put<double>(out, it.value());
    }
  }
}

SparseMatrix take_sparse(std::string_view bytes, std::size_t& pos, Eigen::Index n) {
  const auto nnz = take<std::uint64_t>(bytes, pos);
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(nnz);
  for (std::uint64_t k = 0; k < nnz; ++k) {
    const auto r = take<std::uint32_t>(bytes, pos);
    const auto c = take<std::uint32_t>(bytes, pos);
    const auto v = take<double>(bytes, pos);
    if (r >= n || c >= n) throw Error(ErrorKind::kParse, "sparse entry out of range");
    entries.emplace_back(static_cast<int>(r), static_cast<int>(c), v);
  }
  SparseMatrix m(n, n);
  m.setFromTriplets(entries.begin(), entries.end());
  m.makeCompressed();
  return m;
}

}  // namespace

std::string serialize_features(const CellFeatures& features, const AdjacencyPair& adjacency) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(features.values.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(features.values.cols()));
  const std::uint8_t flags = (features.options.include_vertex_coords ? 1 : 0) | (features.options.include_curvature ? 2 : 0);
  put<std::uint8_t>(out, flags);
  for (Eigen::Index r = 0; r < features.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.values.cols(); ++c) put<double>(out, features.values(r, c));
  }
  put<double>(out, adjacency.radius_small);
  put<double>(out, adjacency.radius_large);
  put_sparse(out, adjacency.small);
  put_sparse(out, adjacency.large);
  return out;
}

std::pair<CellFeatures, AdjacencyPair> deserialize_features(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::kParse, "not a feature container (bad magic at byte offset 0)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto rows = static_cast<Eigen::Index>(take<std::uint64_t>(bytes, pos));
  const auto cols = static_cast<Eigen::Index>(take<std::uint64_t>(bytes, pos));
  const auto flags = take<std::uint8_t>(bytes, pos);
  CellFeatures features;
  features.options.include_vertex_coords = (flags & 1) != 0;
  features.options.include_curvature = (flags & 2) != 0;
  if (feature_channels(features.options) != cols) throw Error(ErrorKind::kParse, "channel count does not match flags");
  features.values.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) features.values(r, c) = take<double>(bytes, pos);
  }
  AdjacencyPair adjacency;
  adjacency.radius_small = take<double>(bytes, pos);
  adjacency.radius_large = take<double>(bytes, pos);
  adjacency.small = take_sparse(bytes, pos, rows);
  adjacency.large = take_sparse(bytes, pos, rows);
  return {std::move(features), std::move(adjacency)};
}

}  // namespace prepline
