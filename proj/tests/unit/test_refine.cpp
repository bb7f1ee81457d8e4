#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "prepline/error.hpp"
#include "prepline/refine.hpp"
#include "prepline/synth.hpp"

using namespace prepline;

namespace {

// The first `k` faces of a jittered 3x3 grid, vertices re-indexed.
TriangleMesh small_mesh(int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jitter(-0.4, 0.4);
  const TriangleMesh grid = synth::grid(3, 3.0);
  std::map<int, int> remap;
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  for (int f = 0; f < k; ++f) {
    Face out;
    for (int c = 0; c < 3; ++c) {
      const int v = grid.face(f)[static_cast<std::size_t>(c)];
      auto [it, fresh] = remap.emplace(v, static_cast<int>(verts.size()));
      if (fresh) verts.push_back(grid.vertex(v) + Vec3(0, 0, jitter(rng)));
      out[static_cast<std::size_t>(c)] = it->second;
    }
    faces.push_back(out);
  }
  return TriangleMesh(verts, faces);
}

ProbabilityField random_probs(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ProbabilityField p(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    // Occasionally exact zeros to exercise the probability floor.
    p(i, 1) = unit(rng) < 0.1 ? 0.0 : unit(rng);
    p(i, 0) = 1.0 - p(i, 1);
  }
  return p;
}

// Independent energy: faces sharing two vertices are neighbors.
struct BruteEnergy {
  std::vector<std::array<double, 2>> unary;
  std::vector<std::tuple<int, int, double>> pairs;
  double lambda;

  BruteEnergy(const TriangleMesh& m, const ProbabilityField& p, const GraphCutConfig& c) : lambda(c.lambda) {
    double total_len = 0.0;
    int count = 0;
    std::map<std::pair<int, int>, int> seen;
    for (std::size_t f = 0; f < m.num_faces(); ++f) {
      for (int k = 0; k < 3; ++k) {
        int a = m.face(static_cast<int>(f))[static_cast<std::size_t>(k)];
        int b = m.face(static_cast<int>(f))[static_cast<std::size_t>((k + 1) % 3)];
        if (a > b) std::swap(a, b);
        if (seen.emplace(std::make_pair(a, b), 0).second) {
          total_len += (m.vertex(a) - m.vertex(b)).norm();
          ++count;
        }
      }
      unary.push_back({-std::log(std::max(p(static_cast<Eigen::Index>(f), 0), c.epsilon)),
                       -std::log(std::max(p(static_cast<Eigen::Index>(f), 1), c.epsilon))});
    }
    const double mean = total_len / count;
    for (std::size_t f = 0; f < m.num_faces(); ++f) {
      for (std::size_t g = f + 1; g < m.num_faces(); ++g) {
        std::vector<int> shared;
        for (int a : m.face(static_cast<int>(f))) {
          for (int b : m.face(static_cast<int>(g))) {
            if (a == b) shared.push_back(a);
          }
        }
        if (shared.size() != 2) continue;
        const double len = (m.vertex(shared[0]) - m.vertex(shared[1])).norm();
        const double cosv = m.face_normal(static_cast<int>(f)).dot(m.face_normal(static_cast<int>(g)));
        const double theta = std::acos(std::clamp(cosv, -1.0, 1.0));
        pairs.emplace_back(static_cast<int>(f), static_cast<int>(g), len / mean * std::exp(-theta / c.sigma));
      }
    }
  }

  double operator()(unsigned mask) const {
    double e = 0.0;
    for (std::size_t f = 0; f < unary.size(); ++f) e += unary[f][(mask >> f) & 1u];
    for (const auto& [a, b, w] : pairs) {
      if (((mask >> a) & 1u) != ((mask >> b) & 1u)) e += lambda * w;
    }
    return e;
  }
};

int disagreements(const TriangleMesh& m, const std::vector<int>& labels, double* weighted, double sigma) {
  const FaceAdjacency adj(m);
  int n = 0;
  *weighted = 0.0;
  for (const PairwiseTerm& t : pairwise_terms(m, adj, sigma)) {
    if (labels[static_cast<std::size_t>(t.a)] != labels[static_cast<std::size_t>(t.b)]) {
      ++n;
      *weighted += t.weight;
    }
  }
  return n;
}

}  // namespace

TEST_CASE("min cut equals exhaustive minimum on small meshes") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> faces(2, 16);
  std::uniform_real_distribution<double> lam(0.0, 10.0);
  for (int trial = 0; trial < 100; ++trial) {
    const TriangleMesh m = small_mesh(faces(rng), rng);
    const ProbabilityField p = random_probs(m.num_faces(), rng);
    GraphCutConfig c;
    c.lambda = lam(rng);
    const BruteEnergy brute(m, p, c);
    double best = 1e300;
    for (unsigned mask = 0; mask < (1u << m.num_faces()); ++mask) best = std::min(best, brute(mask));
    const std::vector<int> labels = graph_cut_refine(m, p, c);
    unsigned mask = 0;
    for (std::size_t f = 0; f < labels.size(); ++f) mask |= static_cast<unsigned>(labels[f]) << f;
    CHECK(brute(mask) == doctest::Approx(best).epsilon(1e-9));
    CHECK(cut_energy(m, p, labels, c) == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("lambda extremes") {
  std::mt19937_64 rng(5);
  const TriangleMesh ico = synth::icosphere(2);
  const ProbabilityField p = random_probs(ico.num_faces(), rng);
  SUBCASE("zero smoothing is the argmax") {
    GraphCutConfig c;
    c.lambda = 0.0;
    const auto labels = graph_cut_refine(ico, p, c);
    for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(labels[static_cast<std::size_t>(i)] == (p(i, 1) > p(i, 0) ? 1 : 0));
  }
  SUBCASE("huge smoothing is constant") {
    GraphCutConfig c;
    c.lambda = 1e6;
    const auto labels = graph_cut_refine(ico, p, c);
    double u0 = 0.0;
    double u1 = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      u0 -= std::log(std::max(p(i, 0), c.epsilon));
      u1 -= std::log(std::max(p(i, 1), c.epsilon));
    }
    const int expected = u1 < u0 ? 1 : 0;
    CHECK(std::all_of(labels.begin(), labels.end(), [&](int l) { return l == expected; }));
  }
}

TEST_CASE("refined energy beats random labelings and the argmax") {
  std::mt19937_64 rng(9);
  const TriangleMesh ico = synth::icosphere(2);
  const ProbabilityField p = random_probs(ico.num_faces(), rng);
  const GraphCutConfig c;
  const double e = cut_energy(ico, p, graph_cut_refine(ico, p, c), c);
  std::vector<int> argmax(ico.num_faces());
  for (std::size_t f = 0; f < argmax.size(); ++f) argmax[f] = p(static_cast<Eigen::Index>(f), 1) > p(static_cast<Eigen::Index>(f), 0);
  CHECK(e <= cut_energy(ico, p, argmax, c) + 1e-9);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> labels(ico.num_faces());
    for (int& l : labels) l = coin(rng);
    CHECK(e <= cut_energy(ico, p, labels, c) + 1e-9);
  }
}

TEST_CASE("boundary shrinks as lambda grows") {
  // Noisy split of a sphere into two caps.
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 0.25);
  const TriangleMesh ico = synth::icosphere(3);
  ProbabilityField p(static_cast<Eigen::Index>(ico.num_faces()), 2);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-(4.0 * ico.barycenter(static_cast<int>(i)).z() + noise(rng))));
    p(i, 1) = s;
    p(i, 0) = 1.0 - s;
  }
  int last_count = 1 << 30;
  double last_weight = 1e300;
  for (double lambda : {0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0}) {
    GraphCutConfig c;
    c.lambda = lambda;
    double weight = 0.0;
    const int count = disagreements(ico, graph_cut_refine(ico, p, c), &weight, c.sigma);
    CHECK(weight <= last_weight + 1e-9);
    CHECK(count <= last_count);
    last_count = count;
    last_weight = weight;
  }
}

TEST_CASE("refinement is deterministic") {
  std::mt19937_64 rng(3);
  const TriangleMesh ico = synth::icosphere(3);
  const ProbabilityField p = random_probs(ico.num_faces(), rng);
  CHECK(graph_cut_refine(ico, p) == graph_cut_refine(ico, p));
}

TEST_CASE("component cleanup") {
  const TriangleMesh ico = synth::icosphere(3);
  const FaceAdjacency adj(ico);
  std::vector<int> cap(ico.num_faces());
  for (std::size_t f = 0; f < cap.size(); ++f) cap[f] = ico.barycenter(static_cast<int>(f)).z() > 0.3;
  SUBCASE("single region unchanged") { CHECK(cleanup_components(cap, adj) == cap); }
  SUBCASE("small island removed") {
    std::vector<int> labels = cap;
    int island = -1;
    for (std::size_t f = 0; f < labels.size(); ++f) {
      if (ico.barycenter(static_cast<int>(f)).z() < -0.8) {
        island = static_cast<int>(f);
        break;
      }
    }
    REQUIRE(island >= 0);
    labels[static_cast<std::size_t>(island)] = 1;
    labels[static_cast<std::size_t>(adj.neighbors(island)[0])] = 1;
    CHECK(cleanup_components(labels, adj) == cap);
  }
  SUBCASE("speckle leaves one component") {
    std::mt19937_64 rng(8);
    std::bernoulli_distribution coin(0.35);
    std::vector<int> labels(ico.num_faces());
    for (int& l : labels) l = coin(rng);
    const auto clean = cleanup_components(labels, adj);
    std::vector<int> ones;
    for (std::size_t f = 0; f < clean.size(); ++f) {
      if (clean[f]) ones.push_back(static_cast<int>(f));
      if (clean[f]) CHECK(labels[f] == 1);
    }
    // Independent flood fill over shared edges.
    std::vector<char> seen(clean.size(), 0);
    std::vector<int> stack{ones.front()};
    seen[static_cast<std::size_t>(ones.front())] = 1;
    std::size_t reached = 0;
    while (!stack.empty()) {
      const int f = stack.back();
      stack.pop_back();
      ++reached;
      for (std::size_t g = 0; g < clean.size(); ++g) {
        if (seen[g] || !clean[g]) continue;
        int shared = 0;
        for (int a : ico.face(f)) {
          for (int b : ico.face(static_cast<int>(g))) shared += a == b;
        }
        if (shared == 2) {
          seen[g] = 1;
          stack.push_back(static_cast<int>(g));
        }
      }
    }
    CHECK(reached == ones.size());
  }
  SUBCASE("no region") {
    const std::vector<int> zeros(ico.num_faces(), 0);
    try {
      cleanup_components(zeros, adj);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kEmptyRegion);
    }
  }
}
