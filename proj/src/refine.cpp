#include "prepline/refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "prepline/error.hpp"

namespace prepline {

namespace {

// Residual capacity below this counts as saturated.
constexpr double kSaturated = 1e-12;

}  // namespace

void GraphCutConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorKind::kValidation, "graph cut: lambda must be >= 0");
  if (!(sigma > 0.0)) throw Error(ErrorKind::kValidation, "graph cut: sigma must be > 0");
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw Error(ErrorKind::kValidation, "graph cut: epsilon must be in (0, 0.5)");
}

std::vector<PairwiseTerm> pairwise_terms(const TriangleMesh& mesh, const FaceAdjacency& adjacency, double sigma) {
  const double mean = mesh.mean_edge_length();
  std::vector<PairwiseTerm> out;
  for (const MeshEdge& e : adjacency.edges()) {
    if (e.is_boundary()) continue;
    const double len = (mesh.vertex(e.v0) - mesh.vertex(e.v1)).norm();
    const double cosine = std::clamp(mesh.face_normal(e.faces[0]).dot(mesh.face_normal(e.faces[1])), -1.0, 1.0);
    const double theta = std::acos(cosine);
    out.push_back({e.faces[0], e.faces[1], len / mean * std::exp(-theta / sigma)});
  }
  return out;
}

namespace {

void check_probs(const TriangleMesh& mesh, const ProbabilityField& probs) {
  if (static_cast<std::size_t>(probs.rows()) != mesh.num_faces()) {
    throw Error(ErrorKind::kShape, "graph cut: " + std::to_string(probs.rows()) + " probability rows for " +
                                       std::to_string(mesh.num_faces()) + " faces");
  }
}

double unary(const ProbabilityField& probs, Eigen::Index f, int label, double eps) {
  return -std::log(std::max(probs(f, label), eps));
}

}  // namespace

double cut_energy(const TriangleMesh& mesh, const ProbabilityField& probs, std::span<const int> labels,
                  const GraphCutConfig& config) {
  config.validate();
  check_probs(mesh, probs);
  const FaceAdjacency adjacency(mesh);
  double e = 0.0;
  for (std::size_t f = 0; f < labels.size(); ++f) e += unary(probs, static_cast<Eigen::Index>(f), labels[f], config.epsilon);
  for (const PairwiseTerm& t : pairwise_terms(mesh, adjacency, config.sigma)) {
    if (labels[static_cast<std::size_t>(t.a)] != labels[static_cast<std::size_t>(t.b)]) e += config.lambda * t.weight;
  }
  return e;
}

MaxFlow::MaxFlow(int nodes) : out_(static_cast<std::size_t>(nodes)) {}

void MaxFlow::add_edge(int from, int to, double capacity, double reverse_capacity) {
  out_[static_cast<std::size_t>(from)].push_back(static_cast<int>(arcs_.size()));
  arcs_.push_back({to, capacity});
  out_[static_cast<std::size_t>(to)].push_back(static_cast<int>(arcs_.size()));
  arcs_.push_back({from, reverse_capacity});
}

bool MaxFlow::build_levels(int source, int sink) {
  level_.assign(out_.size(), -1);
  std::queue<int> q;
  level_[static_cast<std::size_t>(source)] = 0;
  q.push(source);
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int a : out_[static_cast<std::size_t>(v)]) {
      const Arc& arc = arcs_[static_cast<std::size_t>(a)];
      if (arc.residual > kSaturated && level_[static_cast<std::size_t>(arc.to)] < 0) {
        level_[static_cast<std::size_t>(arc.to)] = level_[static_cast<std::size_t>(v)] + 1;
        q.push(arc.to);
      }
    }
  }
  return level_[static_cast<std::size_t>(sink)] >= 0;
}

double MaxFlow::push(int node, int sink, double limit) {
  if (node == sink) return limit;
  auto& it = next_[static_cast<std::size_t>(node)];
  const auto& arcs = out_[static_cast<std::size_t>(node)];
  for (; it < arcs.size(); ++it) {
    const int a = arcs[it];
    Arc& arc = arcs_[static_cast<std::size_t>(a)];
    if (arc.residual <= kSaturated || level_[static_cast<std::size_t>(arc.to)] != level_[static_cast<std::size_t>(node)] + 1) {
      continue;
    }
    const double pushed = push(arc.to, sink, std::min(limit, arc.residual));
    if (pushed > 0.0) {
      arc.residual -= pushed;
      arcs_[static_cast<std::size_t>(a ^ 1)].residual += pushed;
      return pushed;
    }
  }
  return 0.0;
}

double MaxFlow::solve(int source, int sink) {
  double flow = 0.0;
  while (build_levels(source, sink)) {
    next_.assign(out_.size(), 0);
    while (true) {
      const double f = push(source, sink, std::numeric_limits<double>::infinity());
      if (f <= 0.0) break;
      flow += f;
    }
  }
  return flow;
}

std::vector<char> MaxFlow::source_side(int source) const {
  std::vector<char> seen(out_.size(), 0);
  std::queue<int> q;
  seen[static_cast<std::size_t>(source)] = 1;
  q.push(source);
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int a : out_[static_cast<std::size_t>(v)]) {
      const Arc& arc = arcs_[static_cast<std::size_t>(a)];
      if (arc.residual > kSaturated && !seen[static_cast<std::size_t>(arc.to)]) {
        seen[static_cast<std::size_t>(arc.to)] = 1;
        q.push(arc.to);
      }
    }
  }
  return seen;
}

std::vector<int> graph_cut_refine(const TriangleMesh& mesh, const ProbabilityField& probs,
                                  const GraphCutConfig& config) {
  config.validate();
  check_probs(mesh, probs);
  const int n = static_cast<int>(mesh.num_faces());
  const int source = n;
  const int sink = n + 1;
  MaxFlow graph(n + 2);
  // A face on the sink side (label 0) cuts its source arc and pays U(0).
  for (int f = 0; f < n; ++f) {
    const double u0 = unary(probs, f, 0, config.epsilon);
    const double u1 = unary(probs, f, 1, config.epsilon);
    const double shared = std::min(u0, u1);
    graph.add_edge(source, f, u0 - shared);
    graph.add_edge(f, sink, u1 - shared);
  }
  if (config.lambda > 0.0) {
    const FaceAdjacency adjacency(mesh);
    for (const PairwiseTerm& t : pairwise_terms(mesh, adjacency, config.sigma)) {
      const double w = config.lambda * t.weight;
      if (w > 0.0) graph.add_edge(t.a, t.b, w, w);
    }
  }
  graph.solve(source, sink);
  const std::vector<char> side = graph.source_side(source);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int f = 0; f < n; ++f) labels[static_cast<std::size_t>(f)] = side[static_cast<std::size_t>(f)] ? 1 : 0;
  return labels;
}

std::vector<int> cleanup_components(std::span<const int> labels, const FaceAdjacency& adjacency) {
  if (labels.size() != adjacency.num_faces()) {
    throw Error(ErrorKind::kShape, "cleanup: label count does not match the mesh");
  }
  std::vector<int> ones;
  for (std::size_t f = 0; f < labels.size(); ++f) {
    if (labels[f] == 1) ones.push_back(static_cast<int>(f));
  }
  if (ones.empty()) throw Error(ErrorKind::kEmptyRegion, "no face is labeled 1; nothing to keep");
  auto comps = connected_components(ones, adjacency);
  std::size_t keep = 0;
  for (std::size_t c = 1; c < comps.size(); ++c) {
    if (comps[c].size() > comps[keep].size() ||
        (comps[c].size() == comps[keep].size() && comps[c].front() < comps[keep].front())) {
      keep = c;
    }
  }
  std::vector<int> out(labels.size(), 0);
  for (int f : comps[keep]) out[static_cast<std::size_t>(f)] = 1;
  return out;
}

}  // namespace prepline
