#pragma once

#include <span>
#include <vector>

#include "prepline/mesh.hpp"
#include "prepline/segnet.hpp"

namespace prepline {

struct GraphCutConfig {
  double lambda = 2.0;   // smoothness weight
  double sigma = 0.5;    // dihedral sensitivity, radians
  double epsilon = 1e-6; // probability floor

  void validate() const;
};

/// Weight of every interior edge: (length / mean edge length) * exp(-theta / sigma),
/// theta being the angle between the two face normals.
struct PairwiseTerm {
  int a = -1;
  int b = -1;
  double weight = 0.0;
};
std::vector<PairwiseTerm> pairwise_terms(const TriangleMesh& mesh, const FaceAdjacency& adjacency, double sigma);

/// Sum over faces of -log(max(p, eps)) for the chosen label plus lambda times
/// the weight of every edge whose faces disagree.
double cut_energy(const TriangleMesh& mesh, const ProbabilityField& probs, std::span<const int> labels,
                  const GraphCutConfig& config);

/// Exact minimizer of cut_energy from one s-t min cut (Dinic). Label 1 is the
/// set of faces reachable from the source in the final residual graph, so the
/// result is unique for given inputs.
std::vector<int> graph_cut_refine(const TriangleMesh& mesh, const ProbabilityField& probs,
                                  const GraphCutConfig& config = {});

/// Keeps the largest edge-connected label-1 component (ties: lowest face id)
/// and sets every other label-1 face to 0. Throws Error(kEmptyRegion) when no
/// face has label 1.
std::vector<int> cleanup_components(std::span<const int> labels, const FaceAdjacency& adjacency);

/// Dinic maximum flow on a directed graph with real capacities.
class MaxFlow {
 public:
  explicit MaxFlow(int nodes);
  void add_edge(int from, int to, double capacity, double reverse_capacity = 0.0);
  double solve(int source, int sink);
  /// After solve(): nodes reachable from the source through residual edges.
  std::vector<char> source_side(int source) const;

 private:
  struct Arc {
    int to;
    double residual;
  };
  bool build_levels(int source, int sink);
  double push(int node, int sink, double limit);

  std::vector<Arc> arcs_;  // arc i pairs with arc i ^ 1
  std::vector<std::vector<int>> out_;
  std::vector<int> level_;
  std::vector<std::size_t> next_;
};

}  // namespace prepline
