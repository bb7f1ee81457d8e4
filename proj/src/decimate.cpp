#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

#include <Eigen/Dense>

#include "prepline/error.hpp"
#include "prepline/preprocess.hpp"

namespace prepline {
namespace {

using Quadric = Eigen::Matrix4d;

struct Candidate {
  double cost;
  int keep;
  int remove;
  std::uint32_t keep_stamp;
  std::uint32_t remove_stamp;
  Vec3 target;
};

struct CandidateOrder {
  bool operator()(const Candidate& a, const Candidate& b) const {
    if (a.cost != b.cost) return a.cost > b.cost;
    if (a.keep != b.keep) return a.keep > b.keep;
    return a.remove > b.remove;
  }
};

// Minimum fraction of the old normal a moved face must keep.
constexpr double kFoldThreshold = 0.2;

class Decimator {
 public:
  explicit Decimator(const TriangleMesh& mesh)
      : positions_(mesh.vertices()), faces_(mesh.faces()) {
    const FaceAdjacency adjacency(mesh);
    const std::size_t nv = positions_.size();
    incident_.resize(nv);
    boundary_.assign(nv, 0);
    alive_vertex_.assign(nv, 1);
    stamp_.assign(nv, 0);
    alive_face_.assign(faces_.size(), 1);
    quadrics_.assign(nv, Quadric::Zero());
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      for (int v : faces_[f]) incident_[static_cast<std::size_t>(v)].push_back(static_cast<int>(f));
      const Vec3& a = positions_[static_cast<std::size_t>(faces_[f][0])];
      const Vec3 n2 = (positions_[static_cast<std::size_t>(faces_[f][1])] - a)
                          .cross(positions_[static_cast<std::size_t>(faces_[f][2])] - a);
      const double area = 0.5 * n2.norm();
      if (area <= 0.0) continue;
      const Vec3 n = n2.normalized();
      Eigen::Vector4d plane(n.x(), n.y(), n.z(), -n.dot(a));
      const Quadric k = area * plane * plane.transpose();
      for (int v : faces_[f]) quadrics_[static_cast<std::size_t>(v)] += k;
    }
    for (const MeshEdge& e : adjacency.edges()) {
      if (e.is_boundary()) {
        boundary_[static_cast<std::size_t>(e.v0)] = 1;
        boundary_[static_cast<std::size_t>(e.v1)] = 1;
      }
    }
    live_faces_ = faces_.size();
    for (const MeshEdge& e : adjacency.edges()) push(e.v0, e.v1);
  }

  void run(std::size_t target) {
    while (live_faces_ > target && !queue_.empty()) {
      const Candidate c = queue_.top();
      queue_.pop();
      if (!alive_vertex_[static_cast<std::size_t>(c.keep)] || !alive_vertex_[static_cast<std::size_t>(c.remove)]) continue;
      if (stamp_[static_cast<std::size_t>(c.keep)] != c.keep_stamp ||
          stamp_[static_cast<std::size_t>(c.remove)] != c.remove_stamp) {
        continue;
      }
      collapse(c);
    }
  }

  TriangleMesh result() const {
    std::vector<int> remap(positions_.size(), -1);
    std::vector<Vec3> verts;
    std::vector<Face> faces;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!alive_face_[f]) continue;
      Face t = faces_[f];
      for (int& v : t) {
        int& slot = remap[static_cast<std::size_t>(v)];
        if (slot < 0) {
          slot = static_cast<int>(verts.size());
          verts.push_back(positions_[static_cast<std::size_t>(v)]);
        }
        v = slot;
      }
      faces.push_back(t);
    }
    return TriangleMesh(std::move(verts), std::move(faces));
  }

  std::size_t live_faces() const { return live_faces_; }

 private:
  static double quadric_error(const Quadric& q, const Vec3& p) {
    const Eigen::Vector4d h(p.x(), p.y(), p.z(), 1.0);
    return std::max(0.0, h.dot(q * h));
  }

  void push(int a, int b) {
    const bool ba = boundary_[static_cast<std::size_t>(a)];
    const bool bb = boundary_[static_cast<std::size_t>(b)];
    if (ba && bb) return;
    int keep = a;
    int remove = b;
    if (bb) std::swap(keep, remove);
    const Quadric q = quadrics_[static_cast<std::size_t>(a)] + quadrics_[static_cast<std::size_t>(b)];
    Vec3 target;
    if (ba || bb) {
      target = positions_[static_cast<std::size_t>(keep)];
    } else {
      const Eigen::Matrix3d m = q.topLeftCorner<3, 3>();
      const Vec3 rhs = -q.topRightCorner<3, 1>();
      Eigen::FullPivLU<Eigen::Matrix3d> lu(m);
      bool solved = false;
      if (lu.isInvertible() && lu.rcond() > 1e-9) {
        target = lu.solve(rhs);
        // Reject optimal points that wander far from the edge.
        const Vec3& pa = positions_[static_cast<std::size_t>(a)];
        const Vec3& pb = positions_[static_cast<std::size_t>(b)];
        const double len = (pa - pb).norm();
        solved = target.allFinite() && (target - 0.5 * (pa + pb)).norm() <= 2.0 * len;
      }
      if (!solved) {
        const Vec3& pa = positions_[static_cast<std::size_t>(a)];
        const Vec3& pb = positions_[static_cast<std::size_t>(b)];
        const Vec3 mid = 0.5 * (pa + pb);
        target = mid;
        double best = quadric_error(q, mid);
        for (const Vec3& cand : {pa, pb}) {
          const double e = quadric_error(q, cand);
          if (e < best) {
            best = e;
            target = cand;
          }
        }
      }
    }
    queue_.push({quadric_error(q, target), keep, remove, stamp_[static_cast<std::size_t>(keep)],
                 stamp_[static_cast<std::size_t>(remove)], target});
  }

  std::vector<int> neighbors(int v) const {
    std::vector<int> out;
    for (int f : incident_[static_cast<std::size_t>(v)]) {
      for (int w : faces_[static_cast<std::size_t>(f)]) {
        if (w != v) out.push_back(w);
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  bool collapse(const Candidate& c) {
    const int keep = c.keep;
    const int remove = c.remove;
    std::vector<int> shared;
    for (int f : incident_[static_cast<std::size_t>(remove)]) {
      const Face& t = faces_[static_cast<std::size_t>(f)];
      if (t[0] == keep || t[1] == keep || t[2] == keep) shared.push_back(f);
    }
    if (shared.size() != 2) return false;

    // Link condition: the only common neighbors are the two opposite vertices.
    const auto nk = neighbors(keep);
    const auto nr = neighbors(remove);
    std::vector<int> common;
    std::set_intersection(nk.begin(), nk.end(), nr.begin(), nr.end(), std::back_inserter(common));
    if (common.size() != 2) return false;
    if (live_faces_ <= 4) return false;

    // Fold-over guard on every face that survives and moves.
    for (int v : {keep, remove}) {
      for (int f : incident_[static_cast<std::size_t>(v)]) {
        if (f == shared[0] || f == shared[1]) continue;
        const Face& t = faces_[static_cast<std::size_t>(f)];
        std::array<Vec3, 3> before{};
        std::array<Vec3, 3> after{};
        for (int k = 0; k < 3; ++k) {
          const int w = t[static_cast<std::size_t>(k)];
          before[static_cast<std::size_t>(k)] = positions_[static_cast<std::size_t>(w)];
          after[static_cast<std::size_t>(k)] = (w == keep || w == remove) ? c.target : before[static_cast<std::size_t>(k)];
        }
        const Vec3 n0 = (before[1] - before[0]).cross(before[2] - before[0]);
        const Vec3 n1 = (after[1] - after[0]).cross(after[2] - after[0]);
        const double l0 = n0.norm();
        const double l1 = n1.norm();
        if (l1 <= 1e-14 * std::max(1.0, l0)) return false;
        if (l0 > 0.0 && n0.dot(n1) < kFoldThreshold * l0 * l1) return false;
      }
    }

    for (int f : shared) {
      alive_face_[static_cast<std::size_t>(f)] = 0;
      for (int w : faces_[static_cast<std::size_t>(f)]) {
        auto& inc = incident_[static_cast<std::size_t>(w)];
        inc.erase(std::remove(inc.begin(), inc.end(), f), inc.end());
      }
    }
    for (int f : incident_[static_cast<std::size_t>(remove)]) {
      for (int& w : faces_[static_cast<std::size_t>(f)]) {
        if (w == remove) w = keep;
      }
      incident_[static_cast<std::size_t>(keep)].push_back(f);
    }
    incident_[static_cast<std::size_t>(remove)].clear();
    std::sort(incident_[static_cast<std::size_t>(keep)].begin(), incident_[static_cast<std::size_t>(keep)].end());
    alive_vertex_[static_cast<std::size_t>(remove)] = 0;
    positions_[static_cast<std::size_t>(keep)] = c.target;
    quadrics_[static_cast<std::size_t>(keep)] += quadrics_[static_cast<std::size_t>(remove)];
    ++stamp_[static_cast<std::size_t>(keep)];
    ++stamp_[static_cast<std::size_t>(remove)];
    live_faces_ -= 2;
    for (int w : neighbors(keep)) push(keep, w);
    return true;
  }

  std::vector<Vec3> positions_;
  std::vector<Face> faces_;
  std::vector<std::vector<int>> incident_;
  std::vector<char> boundary_;
  std::vector<char> alive_vertex_;
  std::vector<char> alive_face_;
  std::vector<std::uint32_t> stamp_;
  std::vector<Quadric> quadrics_;
  std::priority_queue<Candidate, std::vector<Candidate>, CandidateOrder> queue_;
  std::size_t live_faces_ = 0;
};

}  // namespace

DecimationResult decimate(const TriangleMesh& mesh, std::size_t target_faces) {
  DecimationResult out;
  if (target_faces < 4) throw Error(ErrorKind::kValidation, "decimation target must be >= 4 faces");
  if (target_faces >= mesh.num_faces()) {
    // Validate manifoldness even on the no-op path.
    FaceAdjacency check(mesh);
    if (target_faces > mesh.num_faces()) {
      std::ostringstream msg;
      msg << "decimation target " << target_faces << " exceeds current face count "
          << mesh.num_faces() << "; mesh returned unchanged";
      out.warnings.push_back(msg.str());
    }
    out.mesh = mesh;
    return out;
  }
  Decimator dec(mesh);
  dec.run(target_faces);
  if (dec.live_faces() > target_faces + target_faces / 200) {
    std::ostringstream msg;
    msg << "decimation stopped at " << dec.live_faces() << " faces (target " << target_faces
        << "): no further valid collapses";
    out.warnings.push_back(msg.str());
  }
  out.mesh = dec.result();
  return out;
}

}  // namespace prepline
