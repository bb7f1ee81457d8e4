#include "prepline/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "hull.hpp"
#include "prepline/error.hpp"

namespace prepline {

Arch parse_arch(const std::string& text) {
  if (text == "upper") return Arch::kUpper;
  if (text == "lower") return Arch::kLower;
  throw Error(ErrorKind::kValidation, "arch must be \"upper\" or \"lower\", got \"" + text + "\"");
}

std::string to_string(Arch arch) { return arch == Arch::kUpper ? "upper" : "lower"; }

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

RigidTransform RigidTransform::compose(const RigidTransform& first) const {
  RigidTransform out;
  out.rotation = rotation * first.rotation;
  out.translation = rotation * first.translation + translation;
  return out;
}

namespace {

// Every input point lying on the hull boundary, not just the hull's corner
// vertices. Points on large flat regions would otherwise be in or out
// depending on pose.
std::vector<int> hull_boundary_points(std::span<const Vec3> points, const std::vector<std::array<int, 3>>& hull) {
  Eigen::AlignedBox3d box;
  for (const Vec3& p : points) box.extend(p);
  const double tol = 2.0 * detail::kHullTolerance * box.diagonal().norm();
  std::vector<Vec3> normals;
  std::vector<double> offsets;
  for (const auto& f : hull) {
    const Vec3& a = points[static_cast<std::size_t>(f[0])];
    const Vec3 n = (points[static_cast<std::size_t>(f[1])] - a).cross(points[static_cast<std::size_t>(f[2])] - a);
    if (n.norm() == 0.0) continue;
    normals.push_back(n.normalized());
    offsets.push_back(normals.back().dot(a));
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t k = 0; k < normals.size(); ++k) {
      if (normals[k].dot(points[i]) - offsets[k] >= -tol) {
        out.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  return out;
}

// Volume of {hull} ∩ {z >= 0} (upper = true) or z <= 0, with the hull given in
// registered coordinates. The cutting plane passes through the origin, so
// the cap contributes nothing to the divergence-theorem sum.
double half_volume(const std::vector<Vec3>& pts, const std::vector<std::array<int, 3>>& hull, bool upper) {
  double volume = 0.0;
  const double sign = upper ? 1.0 : -1.0;
  for (const auto& tri : hull) {
    std::vector<Vec3> poly;
    for (int k = 0; k < 3; ++k) {
      const Vec3& a = pts[static_cast<std::size_t>(tri[static_cast<std::size_t>(k)])];
      const Vec3& b = pts[static_cast<std::size_t>(tri[static_cast<std::size_t>((k + 1) % 3)])];
      const double da = sign * a.z();
      const double db = sign * b.z();
      if (da >= 0) poly.push_back(a);
      if ((da >= 0) != (db >= 0)) {
        const double t = da / (da - db);
        poly.push_back(a + t * (b - a));
      }
    }
    for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
      volume += poly[0].dot(poly[i].cross(poly[i + 1])) / 6.0;
    }
  }
  return volume;
}

// Sign (+1/-1) making the lowest-index vertex with a non-negligible
// projection onto `axis` positive.
double index_sign(const std::vector<Vec3>& centered, const Vec3& axis, double tol) {
  for (const Vec3& p : centered) {
    const double s = p.dot(axis);
    if (std::abs(s) > tol) return s > 0 ? 1.0 : -1.0;
  }
  return 1.0;
}

}  // namespace

std::vector<int> convex_hull_vertices(std::span<const Vec3> points) {
  return hull_boundary_points(points, detail::convex_hull(points));
}

Registration obb_register(const TriangleMesh& mesh, Arch arch) {
  if (mesh.empty()) throw Error(ErrorKind::kRegistration, "cannot register an empty mesh");

  RigidTransform pre;
  if (arch == Arch::kUpper) pre.rotation = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
  const TriangleMesh flipped = pre.apply(mesh);
  const std::vector<Vec3>& verts = flipped.vertices();

  const auto hull = detail::convex_hull(verts);
  const std::vector<int> hull_ids = hull_boundary_points(verts, hull);

  Vec3 hull_mean = Vec3::Zero();
  for (int i : hull_ids) hull_mean += verts[static_cast<std::size_t>(i)];
  hull_mean /= static_cast<double>(hull_ids.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i : hull_ids) {
    const Vec3 d = verts[static_cast<std::size_t>(i)] - hull_mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(hull_ids.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const Vec3 lambda = eig.eigenvalues();  // ascending
  if (!(lambda(0) > 1e-12 * lambda(2))) {
    throw Error(ErrorKind::kRegistration, "degenerate hull: vertices are coplanar");
  }
  Vec3 ex = eig.eigenvectors().col(2);
  Vec3 ez = eig.eigenvectors().col(0);

  Vec3 center = Vec3::Zero();
  for (const Vec3& p : verts) center += p;
  center /= static_cast<double>(verts.size());
  std::vector<Vec3> centered(verts.size());
  for (std::size_t i = 0; i < verts.size(); ++i) centered[i] = verts[i] - center;

  const double diag = flipped.bounding_box_diagonal();
  const double len_tol = 1e-9 * diag;

  // z sign.
  bool z_decided = false;
  const auto loops = extract_boundary_loops(flipped);
  if (!loops.empty()) {
    Vec3 loop_center = Vec3::Zero();
    for (int v : loops.front().vertices) loop_center += centered[static_cast<std::size_t>(v)];
    loop_center /= static_cast<double>(loops.front().vertices.size());
    const double s = loop_center.dot(ez);
    if (std::abs(s) > len_tol) {
      if (s > 0) ez = -ez;
      z_decided = true;
    }
  } else {
    double dmax = 0.0;
    for (const Vec3& p : centered) dmax = std::max(dmax, p.norm());
    int sign = 0;
    bool consistent = true;
    for (const Vec3& p : centered) {
      if (p.norm() < dmax * (1.0 - 1e-9)) continue;
      const double s = p.dot(ez);
      const int si = std::abs(s) > len_tol ? (s > 0 ? 1 : -1) : 0;
      if (si == 0 || (sign != 0 && si != sign)) consistent = false;
      sign = si;
    }
    if (consistent && sign != 0) {
      if (sign < 0) ez = -ez;
      z_decided = true;
    }
  }
  if (!z_decided) {
    // Hull half-volumes in a provisional frame with z along ez.
    const Vec3 ey_tmp = ez.cross(ex);
    std::vector<Vec3> local(verts.size());
    for (std::size_t i = 0; i < verts.size(); ++i) {
      local[i] = Vec3(centered[i].dot(ex), centered[i].dot(ey_tmp), centered[i].dot(ez));
    }
    const double up = half_volume(local, hull, true);
    const double down = half_volume(local, hull, false);
    if (std::abs(up - down) > 1e-9 * (std::abs(up) + std::abs(down))) {
      if (down > up) ez = -ez;
    } else {
      ez *= index_sign(centered, ez, 1e-6 * diag);
    }
  }

  // x sign from the third central moment of the hull vertices.
  double m3 = 0.0;
  for (int i : hull_ids) m3 += std::pow((verts[static_cast<std::size_t>(i)] - hull_mean).dot(ex), 3);
  m3 /= static_cast<double>(hull_ids.size());
  const double sigma = std::sqrt(lambda(2));
  if (std::abs(m3) > 1e-9 * sigma * sigma * sigma) {
    if (m3 < 0) ex = -ex;
  } else {
    ex *= index_sign(centered, ex, 1e-6 * diag);
  }
  const Vec3 ey = ez.cross(ex);

  Eigen::Matrix3d axes;
  axes.row(0) = ex.transpose();
  axes.row(1) = ey.transpose();
  axes.row(2) = ez.transpose();
  RigidTransform align;
  align.rotation = axes;
  align.translation = -(axes * center);

  Registration out;
  out.transform = align.compose(pre);
  out.mesh = out.transform.apply(mesh);
  return out;
}

Normalization normalize(const TriangleMesh& mesh) {
  const auto& verts = mesh.vertices();
  const double n = static_cast<double>(verts.size());
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : verts) mean += p;
  mean /= n;
  Vec3 var = Vec3::Zero();
  for (const Vec3& p : verts) var += (p - mean).cwiseAbs2();
  var /= n;
  Normalization out;
  out.transform.mean = mean;
  out.transform.stddev = var.cwiseSqrt();
  for (int c = 0; c < 3; ++c) {
    const double sd = out.transform.stddev[c];
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean[c])))) {
      throw Error(ErrorKind::kNormalization, "zero variance along axis " + std::to_string(c));
    }
  }
  out.mesh = mesh;
  for (Vec3& p : out.mesh.mutable_vertices()) p = out.transform.apply(p);
  return out;
}

Eigen::Matrix3d augmentation_matrix(const AugmentationSpec& spec, std::uint64_t sample_index, int copy) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(sample_index), static_cast<std::uint32_t>(sample_index >> 32),
                    static_cast<std::uint32_t>(copy)};
  std::mt19937_64 rng(seq);
  auto uniform = [&](const std::array<double, 2>& range) {
    return std::uniform_real_distribution<double>(range[0], range[1])(rng);
  };
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double ax = uniform(spec.rotation_x_deg) * kDeg;
  const double ay = uniform(spec.rotation_y_deg) * kDeg;
  const double az = uniform(spec.rotation_z_deg) * kDeg;
  const Vec3 scale(uniform(spec.scale), uniform(spec.scale), uniform(spec.scale));
  const Eigen::Matrix3d rx = Eigen::AngleAxisd(ax, Vec3::UnitX()).toRotationMatrix();
  const Eigen::Matrix3d ry = Eigen::AngleAxisd(ay, Vec3::UnitY()).toRotationMatrix();
  const Eigen::Matrix3d rz = Eigen::AngleAxisd(az, Vec3::UnitZ()).toRotationMatrix();
  return scale.asDiagonal() * rz * ry * rx;
}

std::vector<LabeledMesh> augment(const LabeledMesh& sample, const AugmentationSpec& spec,
                                 std::uint64_t sample_index) {
  if (spec.samples_per_die < 0) throw Error(ErrorKind::kValidation, "samples_per_die must be >= 0");
  std::vector<LabeledMesh> out;
  out.reserve(static_cast<std::size_t>(spec.samples_per_die) + 1);
  out.push_back(sample);
  for (int copy = 0; copy < spec.samples_per_die; ++copy) {
    const Eigen::Matrix3d m = augmentation_matrix(spec, sample_index, copy);
    LabeledMesh aug{sample.mesh.transformed(m, Vec3::Zero()), sample.labels};
    out.push_back(std::move(aug));
  }
  return out;
}

}  // namespace prepline
