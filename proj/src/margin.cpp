#include "prepline/margin.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "json.hpp"
#include "prepline/error.hpp"

namespace prepline {

BoundaryFaces extract_boundary_faces(const LabeledMesh& labeled) {
  const TriangleMesh& mesh = labeled.mesh;
  if (labeled.labels.size() != mesh.num_faces()) {
    throw Error(ErrorKind::kShape, "boundary extraction: label count does not match the mesh");
  }
  const FaceAdjacency adjacency(mesh);

  struct HalfEdge {
    int from;
    int to;
    int face;
  };
  std::vector<HalfEdge> halves;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    if (labeled.labels[f] != 1) continue;
    for (int k = 0; k < 3; ++k) {
      const int g = adjacency.across(static_cast<int>(f), k);
      if (g < 0 || labeled.labels[static_cast<std::size_t>(g)] != 0) continue;
      const Face& tri = mesh.face(static_cast<int>(f));
      halves.push_back({tri[static_cast<std::size_t>(k)], tri[static_cast<std::size_t>((k + 1) % 3)], static_cast<int>(f)});
    }
  }
  if (halves.empty()) {
    throw Error(ErrorKind::kNoBoundary, "labels have no boundary between label 1 and label 0 faces");
  }

  std::map<int, std::vector<std::size_t>> outgoing;
  for (std::size_t h = 0; h < halves.size(); ++h) outgoing[halves[h].from].push_back(h);

  std::vector<char> used(halves.size(), 0);
  std::vector<std::vector<std::size_t>> loops;
  for (std::size_t start = 0; start < halves.size(); ++start) {
    if (used[start]) continue;
    std::vector<std::size_t> loop;
    std::size_t cur = start;
    while (true) {
      used[cur] = 1;
      loop.push_back(cur);
      const int v = halves[cur].to;
      if (v == halves[start].from) break;
      std::size_t next = halves.size();
      for (std::size_t h : outgoing[v]) {
        if (!used[h]) {
          next = h;
          break;
        }
      }
      if (next == halves.size()) {
        const Vec3& p = mesh.vertex(v);
        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "label boundary does not close: it ends at vertex %d (%.3f, %.3f, %.3f) after %zu edges; "
                      "the label-1 region probably touches the open border of the mesh",
                      v, p.x(), p.y(), p.z(), loop.size());
        throw Error(ErrorKind::kIncompleteMargin, buf);
      }
      cur = next;
    }
    loops.push_back(std::move(loop));
  }

  auto loop_length = [&](const std::vector<std::size_t>& loop) {
    double len = 0.0;
    for (std::size_t h : loop) len += (mesh.vertex(halves[h].from) - mesh.vertex(halves[h].to)).norm();
    return len;
  };
  std::size_t best = 0;
  double best_len = loop_length(loops[0]);
  for (std::size_t l = 1; l < loops.size(); ++l) {
    const double len = loop_length(loops[l]);
    if (len > best_len) {
      best = l;
      best_len = len;
    }
  }

  std::vector<int> faces;
  for (std::size_t h : loops[best]) {
    const int f = halves[h].face;
    if (faces.empty() || faces.back() != f) faces.push_back(f);
  }
  while (faces.size() > 1 && faces.front() == faces.back()) faces.pop_back();
  const auto lowest = std::min_element(faces.begin(), faces.end());
  std::rotate(faces.begin(), lowest, faces.end());

  BoundaryFaces out;
  out.faces = std::move(faces);
  for (int f : out.faces) out.centers.push_back(mesh.barycenter(f));
  return out;
}

double smoothing_bound(std::size_t n) {
  const double nn = static_cast<double>(n);
  return 0.005 * (nn - std::sqrt(2.0 * nn));
}

namespace {

struct Basis {
  std::array<int, 4> index;
  std::array<double, 4> value;
};

// Segment and local coordinate of t on M uniform periodic intervals.
std::pair<int, double> locate(double t, int m) {
  t -= std::floor(t);
  const double u = t * m;
  const int j = std::min(m - 1, static_cast<int>(std::floor(u)));
  return {j, u - j};
}

std::array<int, 4> support(int j, int m) {
  return {(j - 1 + m) % m, j, (j + 1) % m, (j + 2) % m};
}

std::array<double, 4> basis_values(double s, int order) {
  const double r = 1.0 - s;
  switch (order) {
    case 0:
      return {r * r * r / 6.0, (3 * s * s * s - 6 * s * s + 4) / 6.0, (-3 * s * s * s + 3 * s * s + 3 * s + 1) / 6.0,
              s * s * s / 6.0};
    case 1:
      return {-r * r / 2.0, (3 * s * s - 4 * s) / 2.0, (-3 * s * s + 2 * s + 1) / 2.0, s * s / 2.0};
    case 2:
      return {r, 3 * s - 2, -3 * s + 1, s};
    default:
      return {-1.0, 3.0, -3.0, 1.0};
  }
}

Basis basis_at(double t, int m, int order = 0) {
  const auto [j, s] = locate(t, m);
  Basis b{support(j, m), basis_values(s, order)};
  const double scale = std::pow(static_cast<double>(m), order);
  for (double& v : b.value) v *= scale;
  return b;
}

struct Problem {
  std::span<const Vec3> points;
  std::vector<double> t;
  int m = 0;
  Eigen::MatrixXd normal;    // B^T B
  Eigen::MatrixX3d rhs;      // B^T X
  Eigen::MatrixXd penalty;   // integral of second-derivative products

  Problem(std::span<const Vec3> pts, std::vector<double> params, int control) : points(pts), t(std::move(params)), m(control) {
    normal = Eigen::MatrixXd::Zero(m, m);
    rhs = Eigen::MatrixX3d::Zero(m, 3);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Basis b = basis_at(t[i], m);
      for (int a = 0; a < 4; ++a) {
        rhs.row(b.index[a]) += b.value[a] * points[i].transpose();
        for (int c = 0; c < 4; ++c) normal(b.index[a], b.index[c]) += b.value[a] * b.value[c];
      }
    }
    penalty = Eigen::MatrixXd::Zero(m, m);
    const double g = 0.5 / std::sqrt(3.0);
    const double m2 = static_cast<double>(m) * m;
    for (int j = 0; j < m; ++j) {
      const auto idx = support(j, m);
      for (double s : {0.5 - g, 0.5 + g}) {
        const auto v = basis_values(s, 2);
        for (int a = 0; a < 4; ++a) {
          for (int c = 0; c < 4; ++c) penalty(idx[a], idx[c]) += 0.5 * v[a] * v[c] * m2 * m2 / m;
        }
      }
    }
  }

  Eigen::MatrixX3d solve(double mu) const {
    const double ridge = 1e-12 * std::max(normal.trace() / m, 1e-300);
    Eigen::MatrixXd a = normal + mu * penalty;
    a.diagonal().array() += ridge;
    return Eigen::LDLT<Eigen::MatrixXd>(a).solve(rhs);
  }

  double residual(const Eigen::MatrixX3d& control) const {
    double r = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Basis b = basis_at(t[i], m);
      Vec3 p = Vec3::Zero();
      for (int a = 0; a < 4; ++a) p += b.value[a] * control.row(b.index[a]).transpose();
      r += (p - points[i]).squaredNorm();
    }
    return r;
  }
};

}  // namespace

std::vector<double> SmoothingSpline::knots() const {
  std::vector<double> k;
  const int m = static_cast<int>(num_control());
  for (int j = 0; j <= m; ++j) k.push_back(static_cast<double>(j) / m);
  return k;
}

Vec3 SmoothingSpline::evaluate(double t) const { return derivative(t, 0); }

Vec3 SmoothingSpline::derivative(double t, int order) const {
  if (order < 0 || order > 3) throw Error(ErrorKind::kValidation, "spline derivative order must be 0..3");
  const Basis b = basis_at(t, static_cast<int>(num_control()), order);
  Vec3 p = Vec3::Zero();
  for (int a = 0; a < 4; ++a) p += b.value[a] * control.row(b.index[a]).transpose();
  return p;
}

SmoothingSpline fit_smoothing_spline(std::span<const Vec3> points, const SplineOptions& options) {
  const std::size_t n = points.size();
  if (n < 8) throw Error(ErrorKind::kSpline, "smoothing spline needs at least 8 points, got " + std::to_string(n));
  if (options.initial_control_points < 4) throw Error(ErrorKind::kValidation, "spline needs at least 4 control points");

  Eigen::MatrixX3d centered(static_cast<Eigen::Index>(n), 3);
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : points) mean += p;
  mean /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) centered.row(static_cast<Eigen::Index>(i)) = (points[i] - mean).transpose();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::MatrixX3d>(centered).singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-9 * sv(0)) {
    throw Error(ErrorKind::kSpline, "margin points are collinear or coincident; no closed curve to fit");
  }

  std::vector<double> t(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = total;
    total += (points[(i + 1) % n] - points[i]).norm();
  }
  for (double& x : t) x /= total;

  SmoothingSpline out;
  out.bound = smoothing_bound(n);
  out.parameters = t;
  const double s = out.bound;

  int m = std::min<int>(options.initial_control_points, static_cast<int>(n));
  Problem problem(points, t, m);
  Eigen::MatrixX3d control = problem.solve(0.0);
  double fp = problem.residual(control);
  const bool minimal = fp <= s;
  while (fp > s && m < static_cast<int>(n)) {
    m = std::min(static_cast<int>(n), m + std::max(1, m / 2));
    problem = Problem(points, t, m);
    control = problem.solve(0.0);
    fp = problem.residual(control);
  }
  out.control = control;
  out.residual = fp;
  if (minimal || fp > s) return out;

  // Residual grows with the penalty weight; find the weight that spends the
  // budget down to within tolerance of s.
  const double lo_target = (1.0 - options.tolerance) * s;
  double hi = problem.normal.trace() / std::max(problem.penalty.trace(), 1e-300);
  int guard = 0;
  while (problem.residual(problem.solve(hi)) < lo_target) {
    hi *= 10.0;
    if (++guard > 60) throw Error(ErrorKind::kSpline, "smoothing spline: penalty search diverged");
  }
  double lo = hi * 1e-16;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = std::sqrt(lo * hi);
    const Eigen::MatrixX3d c = problem.solve(mid);
    const double r = problem.residual(c);
    if (r <= s) {
      out.control = c;
      out.residual = r;
      out.penalty_weight = mid;
      if (r >= lo_target) break;
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return out;
}

bool loop_self_intersects(std::span<const Vec3> loop) {
  const std::size_t n = loop.size();
  if (n < 4) return false;
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : loop) mean += p;
  mean /= static_cast<double>(n);
  Eigen::MatrixX3d centered(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) centered.row(static_cast<Eigen::Index>(i)) = (loop[i] - mean).transpose();
  const Eigen::JacobiSVD<Eigen::MatrixX3d> svd(centered, Eigen::ComputeThinV);
  std::vector<Eigen::Vector2d> q(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = loop[i] - mean;
    q[i] = Eigen::Vector2d(d.dot(svd.matrixV().col(0)), d.dot(svd.matrixV().col(1)));
  }
  auto orient = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
    return (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
  };
  struct Span {
    double lo, hi;
    std::size_t i;
  };
  std::vector<Span> spans(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = q[i].x();
    const double b = q[(i + 1) % n].x();
    spans[i] = {std::min(a, b), std::max(a, b), i};
  }
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.lo < b.lo; });
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t w = u + 1; w < n && spans[w].lo <= spans[u].hi; ++w) {
      const std::size_t i = spans[u].i;
      const std::size_t j = spans[w].i;
      if ((i + 1) % n == j || (j + 1) % n == i) continue;
      const auto& a = q[i];
      const auto& b = q[(i + 1) % n];
      const auto& c = q[j];
      const auto& d = q[(j + 1) % n];
      const double o1 = orient(a, b, c);
      const double o2 = orient(a, b, d);
      const double o3 = orient(c, d, a);
      const double o4 = orient(c, d, b);
      if (((o1 > 0) != (o2 > 0)) && ((o3 > 0) != (o4 > 0)) && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0) return true;
    }
  }
  return false;
}

MarginLine extract_margin_line(const LabeledMesh& labeled, const SurfaceIndex& original_die, int samples,
                               const SplineOptions& options) {
  if (samples < 3) throw Error(ErrorKind::kValidation, "margin line needs at least 3 samples");
  const BoundaryFaces boundary = extract_boundary_faces(labeled);
  std::vector<Vec3> mapped;
  mapped.reserve(boundary.centers.size());
  for (const Vec3& c : boundary.centers) mapped.push_back(original_die.closest_point(c).point);

  MarginLine out;
  out.spline = fit_smoothing_spline(mapped, options);
  out.points.reserve(static_cast<std::size_t>(samples));
  for (int k = 0; k < samples; ++k) {
    const Vec3 p = out.spline.evaluate(static_cast<double>(k) / samples);
    out.points.push_back(original_die.closest_point(p).point);
  }

  if (loop_self_intersects(out.points)) out.warnings.push_back("sampled margin line self-intersects");
  std::vector<double> gaps;
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    gaps.push_back((out.points[(i + 1) % out.points.size()] - out.points[i]).norm());
  }
  std::vector<double> sorted = gaps;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];
  const auto widest = std::max_element(gaps.begin(), gaps.end());
  if (*widest > 3.0 * median) {
    std::ostringstream msg;
    msg << "margin line spacing " << *widest << " mm after point " << (widest - gaps.begin())
        << " exceeds 3x the median spacing " << median << " mm";
    out.warnings.push_back(msg.str());
  }
  return out;
}

MarginLine extract_margin_line(const LabeledMesh& labeled, const TriangleMesh& original_die, int samples,
                               const SplineOptions& options) {
  return extract_margin_line(labeled, SurfaceIndex(original_die), samples, options);
}

std::string margin_to_json(const MarginLine& line) {
  nlohmann::json j;
  j["case_id"] = line.case_id;
  j["n"] = line.points.size();
  nlohmann::json pts = nlohmann::json::array();
  for (const Vec3& p : line.points) pts.push_back({p.x(), p.y(), p.z()});
  j["points"] = std::move(pts);
  j["closed"] = true;
  return j.dump() + "\n";
}

MarginLine margin_from_json(std::string_view text) {
  MarginLine out;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    out.case_id = j.value("case_id", std::string());
    if (j.contains("closed") && !j.at("closed").get<bool>()) {
      throw Error(ErrorKind::kParse, "margin line JSON: only closed lines are supported");
    }
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 3) throw Error(ErrorKind::kParse, "margin line JSON: points must be [x, y, z]");
      out.points.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
    }
    if (j.contains("n") && j.at("n").get<std::size_t>() != out.points.size()) {
      throw Error(ErrorKind::kParse, "margin line JSON: n does not match the point count");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("margin line JSON: ") + e.what());
  }
  if (out.points.empty()) throw Error(ErrorKind::kParse, "margin line JSON has no points");
  return out;
}

std::string margin_to_obj(const MarginLine& line) {
  std::string out = "# margin line " + line.case_id + "\n";
  char buf[96];
  for (const Vec3& p : line.points) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    out += buf;
  }
  out += "l";
  for (std::size_t i = 0; i < line.points.size(); ++i) out += " " + std::to_string(i + 1);
  out += " 1\n";
  return out;
}

}  // namespace prepline
