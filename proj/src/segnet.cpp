#include "prepline/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "prepline/error.hpp"

namespace prepline {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;

int NetworkConfig::width(int n) const {
  return std::max(1, static_cast<int>(std::lround(static_cast<double>(n) * width_scale)));
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors) n += static_cast<std::size_t>(t.value.size());
  return n;
}

const MatrixXd& NetworkParams::get(const std::string& name) const {
  for (const Tensor& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw Error(ErrorKind::kInternal, "no parameter tensor named " + name);
}

MatrixXd& NetworkParams::get(const std::string& name) {
  return const_cast<MatrixXd&>(static_cast<const NetworkParams&>(*this).get(name));
}

bool NetworkParams::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const Tensor& t) { return t.value.allFinite(); });
}

namespace {

struct Widths {
  int c;
  int ftm1, ftm2, ftm3;
  int m1;
  int glm1_branch, glm1;
  int m2a, m2b, m2c;
  int glm2_branch, glm2;
  int m3a, m3b;

  explicit Widths(const NetworkConfig& cfg)
      : c(cfg.in_channels),
        ftm1(cfg.width(64)),
        ftm2(cfg.width(128)),
        ftm3(cfg.width(64)),
        m1(cfg.width(64)),
        glm1_branch(cfg.width(32)),
        glm1(cfg.width(64)),
        m2a(cfg.width(64)),
        m2b(cfg.width(128)),
        m2c(cfg.width(512)),
        glm2_branch(cfg.width(128)),
        glm2(cfg.width(512)),
        m3a(cfg.width(256)),
        m3b(cfg.width(128)) {}

  int fusion() const { return m1 + glm1 + glm2 + glm2; }
};

struct LayerShape {
  const char* name;
  int in;
  int out;
};

std::vector<LayerShape> layer_shapes(const NetworkConfig& cfg) {
  const Widths w(cfg);
  return {
      {"ftm.c1", w.c, w.ftm1},
      {"ftm.c2", w.ftm1, w.ftm2},
      {"ftm.g1", w.ftm2, w.ftm3},
      {"ftm.out", w.ftm3, w.c * w.c},
      {"mlp1.l1", w.c, w.m1},
      {"mlp1.l2", w.m1, w.m1},
      {"glm1.self", w.m1, w.glm1_branch},
      {"glm1.small", w.m1, w.glm1_branch},
      {"glm1.fuse", 2 * w.glm1_branch, w.glm1},
      {"mlp2.l1", w.glm1, w.m2a},
      {"mlp2.l2", w.m2a, w.m2b},
      {"mlp2.l3", w.m2b, w.m2c},
      {"glm2.self", w.m2c, w.glm2_branch},
      {"glm2.small", w.m2c, w.glm2_branch},
      {"glm2.large", w.m2c, w.glm2_branch},
      {"glm2.fuse", 3 * w.glm2_branch, w.glm2},
      {"mlp3.l1", w.fusion(), w.m3a},
      {"mlp3.l2", w.m3a, w.m3b},
      {"cls", w.m3b, 2},
  };
}

// Index of each layer's weight tensor; its bias follows at +1.
enum Layer : std::size_t {
  kFtmC1,
  kFtmC2,
  kFtmG1,
  kFtmOut,
  kMlp1L1,
  kMlp1L2,
  kGlm1Self,
  kGlm1Small,
  kGlm1Fuse,
  kMlp2L1,
  kMlp2L2,
  kMlp2L3,
  kGlm2Self,
  kGlm2Small,
  kGlm2Large,
  kGlm2Fuse,
  kMlp3L1,
  kMlp3L2,
  kCls,
  kLayerCount,
};

const MatrixXd& weight(const NetworkParams& p, Layer l) { return p.tensors[2 * l].value; }
const MatrixXd& bias(const NetworkParams& p, Layer l) { return p.tensors[2 * l + 1].value; }
MatrixXd& weight(NetworkParams& p, Layer l) { return p.tensors[2 * l].value; }
MatrixXd& bias(NetworkParams& p, Layer l) { return p.tensors[2 * l + 1].value; }

MatrixXd dense(const MatrixXd& x, const NetworkParams& p, Layer l) {
  MatrixXd y = x * weight(p, l);
  y.rowwise() += bias(p, l).row(0);
  return y;
}

MatrixXd relu_dense(const MatrixXd& x, const NetworkParams& p, Layer l) { return dense(x, p, l).cwiseMax(0.0); }

// Accumulates weight/bias gradients for y = x W + b and returns dL/dx.
MatrixXd dense_back(const MatrixXd& x, const MatrixXd& dy, const NetworkParams& p, NetworkParams& g, Layer l) {
  weight(g, l).noalias() += x.transpose() * dy;
  bias(g, l) += dy.colwise().sum();
  return dy * weight(p, l).transpose();
}

MatrixXd relu_mask(const MatrixXd& grad, const MatrixXd& activated) {
  return (activated.array() > 0.0).select(grad, 0.0);
}

// Column-wise max over rows; ties resolve to the first row.
RowVectorXd max_pool(const MatrixXd& x, std::vector<Eigen::Index>& argmax) {
  RowVectorXd out(x.cols());
  argmax.resize(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < x.rows(); ++i) {
      if (x(i, j) > x(best, j)) best = i;
    }
    argmax[static_cast<std::size_t>(j)] = best;
    out(j) = x(best, j);
  }
  return out;
}

struct Activations {
  // FTM
  MatrixXd a1, a2;
  std::vector<Eigen::Index> pool1;
  MatrixXd pooled, a3;
  MatrixXd transform;
  MatrixXd x0;
  // MLP-1, GLM-1
  MatrixXd u1, h1, s1, sh1, s2, g1;
  // MLP-2, GLM-2
  MatrixXd v1, v2, h2, r1, sh2, r2, lh2, r3, g2;
  std::vector<Eigen::Index> pool2;
  MatrixXd fused, m1, m2, logits;
  ProbabilityField probs;
};

void check_shapes(const NetworkParams& params, const MatrixXd& features, const AdjacencyPair& adj) {
  const Eigen::Index n = features.rows();
  std::ostringstream msg;
  if (n == 0) {
    throw Error(ErrorKind::kShape, "FTM: feature matrix has no rows");
  }
  if (features.cols() != params.config.in_channels) {
    msg << "FTM: features have " << features.cols() << " channels, network expects " << params.config.in_channels;
    throw Error(ErrorKind::kShape, msg.str());
  }
  if (adj.small.rows() != n || adj.small.cols() != n) {
    msg << "GLM-1: A_S is " << adj.small.rows() << "x" << adj.small.cols() << ", features have " << n << " rows";
    throw Error(ErrorKind::kShape, msg.str());
  }
  if (adj.large.rows() != n || adj.large.cols() != n) {
    msg << "GLM-2: A_L is " << adj.large.rows() << "x" << adj.large.cols() << ", features have " << n << " rows";
    throw Error(ErrorKind::kShape, msg.str());
  }
  if (params.tensors.size() != 2 * kLayerCount) {
    throw Error(ErrorKind::kShape, "network: parameter set has the wrong number of tensors");
  }
}

Activations run_forward(const NetworkParams& p, const MatrixXd& f, const AdjacencyPair& adj) {
  check_shapes(p, f, adj);
  const int c = p.config.in_channels;
  const Eigen::Index n = f.rows();
  Activations a;

  a.a1 = relu_dense(f, p, kFtmC1);
  a.a2 = relu_dense(a.a1, p, kFtmC2);
  a.pooled = max_pool(a.a2, a.pool1);
  a.a3 = relu_dense(a.pooled, p, kFtmG1);
  const MatrixXd t = dense(a.a3, p, kFtmOut);
  a.transform.resize(c, c);
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) a.transform(i, j) = t(0, i * c + j);
  }
  a.x0 = f * a.transform;

  a.u1 = relu_dense(a.x0, p, kMlp1L1);
  a.h1 = relu_dense(a.u1, p, kMlp1L2);

  a.s1 = relu_dense(a.h1, p, kGlm1Self);
  a.sh1 = adj.small * a.h1;
  a.s2 = relu_dense(a.sh1, p, kGlm1Small);
  MatrixXd c1(n, a.s1.cols() + a.s2.cols());
  c1 << a.s1, a.s2;
  a.g1 = relu_dense(c1, p, kGlm1Fuse);

  a.v1 = relu_dense(a.g1, p, kMlp2L1);
  a.v2 = relu_dense(a.v1, p, kMlp2L2);
  a.h2 = relu_dense(a.v2, p, kMlp2L3);

  a.r1 = relu_dense(a.h2, p, kGlm2Self);
  a.sh2 = adj.small * a.h2;
  a.r2 = relu_dense(a.sh2, p, kGlm2Small);
  a.lh2 = adj.large * a.h2;
  a.r3 = relu_dense(a.lh2, p, kGlm2Large);
  MatrixXd c2(n, a.r1.cols() + a.r2.cols() + a.r3.cols());
  c2 << a.r1, a.r2, a.r3;
  a.g2 = relu_dense(c2, p, kGlm2Fuse);

  const RowVectorXd global = max_pool(a.g2, a.pool2);
  a.fused.resize(n, a.h1.cols() + a.g1.cols() + a.g2.cols() + global.cols());
  a.fused << a.h1, a.g1, a.g2, global.replicate(n, 1);
  a.m1 = relu_dense(a.fused, p, kMlp3L1);
  a.m2 = relu_dense(a.m1, p, kMlp3L2);
  a.logits = dense(a.m2, p, kCls);

  a.probs.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = a.logits.row(i).maxCoeff();
    const double e0 = std::exp(a.logits(i, 0) - m);
    const double e1 = std::exp(a.logits(i, 1) - m);
    a.probs(i, 0) = e0 / (e0 + e1);
    a.probs(i, 1) = e1 / (e0 + e1);
  }
  return a;
}

void check_labels(Eigen::Index n, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw Error(ErrorKind::kShape, "loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                                       " probability rows");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw Error(ErrorKind::kValidation, "loss: labels must be 0 or 1");
  }
}

struct DiceTerms {
  double w[2];
  double num;
  double den;
};

DiceTerms dice_terms(const ProbabilityField& probs, std::span<const int> labels) {
  double volume[2] = {0.0, 0.0};
  for (int l : labels) volume[l] += 1.0;
  DiceTerms d{};
  for (int k = 0; k < 2; ++k) d.w[k] = 1.0 / std::pow(std::max(volume[k], 1.0), 2);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    for (int k = 0; k < 2; ++k) {
      const double g = y == k ? 1.0 : 0.0;
      d.num += d.w[k] * probs(i, k) * g;
      d.den += d.w[k] * (probs(i, k) + g);
    }
  }
  return d;
}

// log p(i, y_i) straight from the logits, stable for saturated rows.
double log_prob(const MatrixXd& logits, Eigen::Index i, int y) {
  const double m = logits.row(i).maxCoeff();
  const double lse = m + std::log(std::exp(logits(i, 0) - m) + std::exp(logits(i, 1) - m));
  return logits(i, y) - lse;
}

}  // namespace

NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed) {
  if (config.in_channels <= 0 || !(config.width_scale > 0.0)) {
    throw Error(ErrorKind::kValidation, "network needs positive input channels and width scale");
  }
  NetworkParams p;
  p.config = config;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const LayerShape& s : layer_shapes(config)) {
    const bool ftm_out = std::strcmp(s.name, "ftm.out") == 0;
    const double stddev = ftm_out ? 1e-3 : std::sqrt(2.0 / s.in);
    MatrixXd w(s.in, s.out);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = stddev * normal(rng);
    }
    MatrixXd b = MatrixXd::Zero(1, s.out);
    if (ftm_out) {
      for (int i = 0; i < config.in_channels; ++i) b(0, i * config.in_channels + i) = 1.0;
    }
    p.tensors.push_back({std::string(s.name) + ".W", std::move(w)});
    p.tensors.push_back({std::string(s.name) + ".b", std::move(b)});
  }
  return p;
}

NetworkParams zeros_like(const NetworkParams& params) {
  NetworkParams z = params;
  for (Tensor& t : z.tensors) t.value.setZero();
  return z;
}

ProbabilityField forward(const NetworkParams& params, const MatrixXd& features, const AdjacencyPair& adj) {
  return run_forward(params, features, adj).probs;
}

std::string activation_signature(const NetworkParams& params, const MatrixXd& features, const AdjacencyPair& adj) {
  const Activations a = run_forward(params, features, adj);
  std::string out;
  for (const MatrixXd* m : {&a.a1, &a.a2, &a.a3, &a.u1, &a.h1, &a.s1, &a.s2, &a.g1, &a.v1, &a.v2, &a.h2, &a.r1, &a.r2,
                            &a.r3, &a.g2, &a.m1, &a.m2}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) out += (*m).data()[i] > 0.0 ? '1' : '0';
  }
  for (const auto* pool : {&a.pool1, &a.pool2}) {
    for (Eigen::Index row : *pool) out += std::to_string(row) + ',';
  }
  return out;
}

LossParts loss(const ProbabilityField& probs, std::span<const int> labels) {
  check_labels(probs.rows(), labels);
  const DiceTerms d = dice_terms(probs, labels);
  LossParts out;
  out.dice = 1.0 - 2.0 * d.num / d.den;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    out.cross_entropy -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), 1e-300));
  }
  out.cross_entropy /= static_cast<double>(probs.rows());
  return out;
}

LossAndGradients gradients(const NetworkParams& p, const MatrixXd& f, const AdjacencyPair& adj,
                           std::span<const int> labels) {
  const Activations a = run_forward(p, f, adj);
  const Eigen::Index n = f.rows();
  check_labels(n, labels);
  const int c = p.config.in_channels;

  LossAndGradients out;
  out.probs = a.probs;
  const DiceTerms d = dice_terms(a.probs, labels);
  double ce = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) ce -= log_prob(a.logits, i, labels[static_cast<std::size_t>(i)]);
  out.loss = 1.0 - 2.0 * d.num / d.den + ce / static_cast<double>(n);
  out.gradients = zeros_like(p);
  NetworkParams& g = out.gradients;

  // Loss -> logits.
  MatrixXd dlogits(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    double dp[2];
    for (int k = 0; k < 2; ++k) {
      const double gk = y == k ? 1.0 : 0.0;
      dp[k] = -2.0 * d.w[k] * (gk * d.den - d.num) / (d.den * d.den);
    }
    const double p0 = a.probs(i, 0);
    const double p1 = a.probs(i, 1);
    const double inner = dp[0] * p0 + dp[1] * p1;
    dlogits(i, 0) = p0 * (dp[0] - inner) + (p0 - (y == 0 ? 1.0 : 0.0)) / static_cast<double>(n);
    dlogits(i, 1) = p1 * (dp[1] - inner) + (p1 - (y == 1 ? 1.0 : 0.0)) / static_cast<double>(n);
  }

  // Head.
  MatrixXd dm2 = dense_back(a.m2, dlogits, p, g, kCls);
  MatrixXd dm1 = dense_back(a.m1, relu_mask(dm2, a.m2), p, g, kMlp3L2);
  const MatrixXd dfused = dense_back(a.fused, relu_mask(dm1, a.m1), p, g, kMlp3L1);

  const Eigen::Index w_h1 = a.h1.cols();
  const Eigen::Index w_g1 = a.g1.cols();
  const Eigen::Index w_g2 = a.g2.cols();
  MatrixXd dh1 = dfused.leftCols(w_h1);
  MatrixXd dg1 = dfused.middleCols(w_h1, w_g1);
  MatrixXd dg2 = dfused.middleCols(w_h1 + w_g1, w_g2);
  const RowVectorXd dglobal = dfused.rightCols(w_g2).colwise().sum();
  for (Eigen::Index j = 0; j < w_g2; ++j) dg2(a.pool2[static_cast<std::size_t>(j)], j) += dglobal(j);

  // GLM-2.
  const MatrixXd dc2 = dense_back(
      [&] {
        MatrixXd c2(n, a.r1.cols() + a.r2.cols() + a.r3.cols());
        c2 << a.r1, a.r2, a.r3;
        return c2;
      }(),
      relu_mask(dg2, a.g2), p, g, kGlm2Fuse);
  const Eigen::Index br2 = a.r1.cols();
  MatrixXd dh2 = dense_back(a.h2, relu_mask(dc2.leftCols(br2), a.r1), p, g, kGlm2Self);
  dh2 += adj.small.transpose() * dense_back(a.sh2, relu_mask(dc2.middleCols(br2, br2), a.r2), p, g, kGlm2Small);
  dh2 += adj.large.transpose() * dense_back(a.lh2, relu_mask(dc2.rightCols(br2), a.r3), p, g, kGlm2Large);

  // MLP-2.
  MatrixXd dv2 = dense_back(a.v2, relu_mask(dh2, a.h2), p, g, kMlp2L3);
  MatrixXd dv1 = dense_back(a.v1, relu_mask(dv2, a.v2), p, g, kMlp2L2);
  dg1 += dense_back(a.g1, relu_mask(dv1, a.v1), p, g, kMlp2L1);

  // GLM-1.
  const MatrixXd dc1 = dense_back(
      [&] {
        MatrixXd c1(n, a.s1.cols() + a.s2.cols());
        c1 << a.s1, a.s2;
        return c1;
      }(),
      relu_mask(dg1, a.g1), p, g, kGlm1Fuse);
  const Eigen::Index br1 = a.s1.cols();
  dh1 += dense_back(a.h1, relu_mask(dc1.leftCols(br1), a.s1), p, g, kGlm1Self);
  dh1 += adj.small.transpose() * dense_back(a.sh1, relu_mask(dc1.rightCols(br1), a.s2), p, g, kGlm1Small);

  // MLP-1.
  const MatrixXd du1 = dense_back(a.u1, relu_mask(dh1, a.h1), p, g, kMlp1L2);
  const MatrixXd dx0 = dense_back(a.x0, relu_mask(du1, a.u1), p, g, kMlp1L1);

  // FTM: x0 = f T, T row-major from the output vector.
  const MatrixXd dtransform = f.transpose() * dx0;
  MatrixXd dt(1, c * c);
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) dt(0, i * c + j) = dtransform(i, j);
  }
  const MatrixXd da3 = dense_back(a.a3, dt, p, g, kFtmOut);
  const MatrixXd dpooled = dense_back(a.pooled, relu_mask(da3, a.a3), p, g, kFtmG1);
  MatrixXd da2 = MatrixXd::Zero(n, a.a2.cols());
  for (Eigen::Index j = 0; j < a.a2.cols(); ++j) da2(a.pool1[static_cast<std::size_t>(j)], j) = dpooled(0, j);
  const MatrixXd da1 = dense_back(a.a1, relu_mask(da2, a.a2), p, g, kFtmC2);
  dense_back(f, relu_mask(da1, a.a1), p, g, kFtmC1);
  return out;
}

LossAndGradients batch_gradients(const NetworkParams& params, const std::vector<const TrainSample*>& batch) {
  if (batch.empty()) throw Error(ErrorKind::kValidation, "empty batch");
  LossAndGradients total;
  total.gradients = zeros_like(params);
  for (const TrainSample* s : batch) {
    const LossAndGradients one = gradients(params, s->features, s->adjacency, s->labels);
    total.loss += one.loss;
    for (std::size_t t = 0; t < total.gradients.tensors.size(); ++t) {
      total.gradients.tensors[t].value += one.gradients.tensors[t].value;
    }
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  total.loss *= scale;
  for (Tensor& t : total.gradients.tensors) t.value *= scale;
  return total;
}

std::vector<std::string> FoldAssignment::cases_in(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

FoldAssignment kfold_split(const std::vector<std::string>& case_ids, int k, std::uint64_t seed) {
  if (k < 1) throw Error(ErrorKind::kValidation, "fold count must be positive");
  if (static_cast<int>(case_ids.size()) < k) {
    throw Error(ErrorKind::kValidation, std::to_string(case_ids.size()) + " case(s) cannot fill " +
                                            std::to_string(k) + " folds");
  }
  std::vector<std::string> order = case_ids;
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end()) {
    throw Error(ErrorKind::kValidation, "duplicate case id in fold split");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldAssignment out;
  out.k = k;
  for (std::size_t i = 0; i < order.size(); ++i) out.fold_of[order[i]] = static_cast<int>(i % k) + 1;
  return out;
}

std::vector<HistoryRow> TrainResult::history() const {
  std::vector<HistoryRow> rows;
  for (const FoldResult& f : folds) rows.insert(rows.end(), f.history.begin(), f.history.end());
  return rows;
}

TrainSample extract_patch(const TrainSample& sample, const std::vector<int>& rows) {
  const Eigen::Index n = sample.features.rows();
  std::vector<int> remap(static_cast<std::size_t>(n), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n) throw Error(ErrorKind::kValidation, "patch row out of range");
    remap[static_cast<std::size_t>(rows[i])] = static_cast<int>(i);
  }
  TrainSample out;
  out.case_id = sample.case_id;
  out.augmented = sample.augmented;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), sample.features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = sample.features.row(rows[i]);
    out.labels.push_back(sample.labels[static_cast<std::size_t>(rows[i])]);
  }
  auto restrict = [&](const SparseMatrix& a) {
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::vector<Eigen::Triplet<double>> row;
      double sum = 0.0;
      for (SparseMatrix::InnerIterator it(a, rows[i]); it; ++it) {
        const int j = remap[static_cast<std::size_t>(it.col())];
        if (j < 0) continue;
        row.emplace_back(static_cast<int>(i), j, it.value());
        sum += it.value();
      }
      for (const auto& t : row) trip.emplace_back(t.row(), t.col(), t.value() / sum);
    }
    SparseMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
  };
  out.adjacency.small = restrict(sample.adjacency.small);
  out.adjacency.large = restrict(sample.adjacency.large);
  out.adjacency.radius_small = sample.adjacency.radius_small;
  out.adjacency.radius_large = sample.adjacency.radius_large;
  return out;
}

namespace {

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0) || c.batch_size <= 0 || c.epochs <= 0 || c.patch_size <= 0 || !(c.epsilon > 0.0) ||
      !(c.beta1 > 0.0 && c.beta1 < 1.0) || !(c.beta2 > 0.0 && c.beta2 < 1.0)) {
    throw Error(ErrorKind::kValidation, "training hyperparameters must be positive (betas in (0,1))");
  }
  if (c.classes != 2) throw Error(ErrorKind::kValidation, "only 2 classes are supported");
}

double mean_loss(const NetworkParams& params, const std::vector<const TrainSample*>& samples) {
  double total = 0.0;
  for (const TrainSample* s : samples) {
    total += loss(forward(params, s->features, s->adjacency), s->labels).total();
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace

FoldResult train_fold(const std::vector<const TrainSample*>& training,
                      const std::vector<const TrainSample*>& validation, const TrainConfig& config,
                      const NetworkConfig& net, int fold, const ProgressFn& progress) {
  validate(config);
  if (training.empty()) throw Error(ErrorKind::kValidation, "fold " + std::to_string(fold) + " has no training samples");
  for (const TrainSample* s : training) {
    if (s->features.cols() != net.in_channels) {
      throw Error(ErrorKind::kShape, "FTM: sample " + s->case_id + " has " + std::to_string(s->features.cols()) +
                                         " channels, network expects " + std::to_string(net.in_channels));
    }
  }

  std::seed_seq seq{config.seed, static_cast<std::uint64_t>(fold), std::uint64_t{0x5e9e7}};
  std::mt19937_64 rng(seq);
  NetworkParams params = init_params(net, rng());
  NetworkParams m = zeros_like(params);
  NetworkParams v = zeros_like(params);

  FoldResult result;
  result.best = params;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(training.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_total = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      ++batch_index;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<TrainSample> patches;
      std::vector<const TrainSample*> batch;
      patches.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const TrainSample* s = training[order[i]];
        if (s->features.rows() > config.patch_size) {
          std::vector<int> all(static_cast<std::size_t>(s->features.rows()));
          std::iota(all.begin(), all.end(), 0);
          std::shuffle(all.begin(), all.end(), rng);
          all.resize(static_cast<std::size_t>(config.patch_size));
          std::sort(all.begin(), all.end());
          patches.push_back(extract_patch(*s, all));
          batch.push_back(&patches.back());
        } else {
          batch.push_back(s);
        }
      }
      const LossAndGradients lg = batch_gradients(params, batch);
      if (!std::isfinite(lg.loss) || !lg.gradients.all_finite()) {
        std::ostringstream msg;
        msg << "non-finite loss at fold " << fold << ", epoch " << epoch << ", batch " << batch_index << " (cases";
        for (const TrainSample* s : batch) msg << ' ' << s->case_id;
        msg << ")";
        throw Error(ErrorKind::kTraining, msg.str());
      }
      train_total += lg.loss * static_cast<double>(batch.size());

      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        const MatrixXd& grad = lg.gradients.tensors[t].value;
        MatrixXd& mt = m.tensors[t].value;
        MatrixXd& vt = v.tensors[t].value;
        mt = config.beta1 * mt + (1.0 - config.beta1) * grad;
        vt = config.beta2 * vt + (1.0 - config.beta2) * grad.cwiseProduct(grad);
        params.tensors[t].value.array() -=
            config.learning_rate * (mt.array() / c1) / ((vt.array() / c2).sqrt() + config.epsilon);
      }
    }

    HistoryRow row;
    row.epoch = epoch;
    row.fold = fold;
    row.train_loss = train_total / static_cast<double>(training.size());
    row.val_loss = validation.empty() ? mean_loss(params, training) : mean_loss(params, validation);
    if (!std::isfinite(row.val_loss)) {
      throw Error(ErrorKind::kTraining,
                  "non-finite validation loss at fold " + std::to_string(fold) + ", epoch " + std::to_string(epoch));
    }
    result.history.push_back(row);
    if (row.val_loss < result.best_val_loss) {
      result.best_val_loss = row.val_loss;
      result.best_epoch = epoch;
      result.best = params;
    }
    if (progress) progress(row);
  }
  return result;
}

TrainResult train(const std::vector<TrainSample>& dataset, const FoldAssignment& folds, const TrainConfig& config,
                  const NetworkConfig& net, const ProgressFn& progress) {
  if (dataset.empty()) throw Error(ErrorKind::kValidation, "training dataset is empty");
  for (const TrainSample& s : dataset) {
    if (!folds.fold_of.contains(s.case_id)) {
      throw Error(ErrorKind::kValidation, "case " + s.case_id + " has no fold assignment");
    }
  }
  TrainResult out;
  for (int k = 1; k <= folds.k; ++k) {
    std::vector<const TrainSample*> training;
    std::vector<const TrainSample*> validation;
    for (const TrainSample& s : dataset) {
      if (folds.fold_of.at(s.case_id) != k) {
        training.push_back(&s);
      } else if (!s.augmented) {
        validation.push_back(&s);
      }
    }
    out.folds.push_back(train_fold(training, validation, config, net, k, progress));
  }
  return out;
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,fold,train_loss,val_loss\n";
  for (const HistoryRow& r : rows) out << r.epoch << ',' << r.fold << ',' << r.train_loss << ',' << r.val_loss << '\n';
  return out.str();
}

namespace {

constexpr char kMagic[8] = {'P', 'L', 'N', 'E', 'T', '\0', '\0', '\1'};

nlohmann::json architecture(const NetworkParams& params) {
  const Widths w(params.config);
  nlohmann::json j;
  j["format_version"] = 1;
  j["in_channels"] = params.config.in_channels;
  j["width_scale"] = params.config.width_scale;
  j["classes"] = 2;
  j["stages"] = {
      {"ftm", {w.ftm1, w.ftm2, w.ftm3, w.c * w.c}},
      {"mlp1", {w.m1, w.m1}},
      {"glm1", {{"branches", {"X", "A_S X"}}, {"branch_width", w.glm1_branch}, {"fusion", w.glm1}}},
      {"mlp2", {w.m2a, w.m2b, w.m2c}},
      {"glm2", {{"branches", {"X", "A_S X", "A_L X"}}, {"branch_width", w.glm2_branch}, {"fusion", w.glm2}}},
      {"global_pool", "max"},
      {"dense_fusion", w.fusion()},
      {"mlp3", {w.m3a, w.m3b}},
      {"classifier", 2},
  };
  nlohmann::json tensors = nlohmann::json::array();
  for (const Tensor& t : params.tensors) {
    tensors.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  }
  j["tensors"] = tensors;
  j["parameter_count"] = params.parameter_count();
  return j;
}

}  // namespace

std::string architecture_json(const NetworkParams& params) { return architecture(params).dump(2); }

std::string serialize_params(const NetworkParams& params) {
  const std::string header = architecture(params).dump();
  std::string out(kMagic, sizeof(kMagic));
  const auto len = static_cast<std::uint32_t>(header.size());
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += header;
  for (const Tensor& t : params.tensors) {
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) {
        const double x = t.value(i, j);
        out.append(reinterpret_cast<const char*>(&x), sizeof(x));
      }
    }
  }
  return out;
}

NetworkParams deserialize_params(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::kParse, "not a prepline network checkpoint (bad magic)");
  }
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof(kMagic), sizeof(len));
  std::size_t pos = sizeof(kMagic) + sizeof(len);
  if (bytes.size() < pos + len) throw Error(ErrorKind::kParse, "checkpoint truncated inside the header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("checkpoint header: ") + e.what());
  }
  pos += len;
  if (header.value("format_version", 0) != 1) {
    throw Error(ErrorKind::kParse, "unsupported checkpoint version " + header.value("format_version", nlohmann::json()).dump());
  }
  NetworkConfig cfg;
  cfg.in_channels = header.at("in_channels").get<int>();
  cfg.width_scale = header.at("width_scale").get<double>();
  NetworkParams p = zeros_like(init_params(cfg, 0));
  const auto& shapes = header.at("tensors");
  if (shapes.size() != p.tensors.size()) throw Error(ErrorKind::kParse, "checkpoint tensor count mismatch");
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    Tensor& tensor = p.tensors[t];
    if (shapes[t].at("name").get<std::string>() != tensor.name ||
        shapes[t].at("rows").get<Eigen::Index>() != tensor.value.rows() ||
        shapes[t].at("cols").get<Eigen::Index>() != tensor.value.cols()) {
      throw Error(ErrorKind::kParse, "checkpoint tensor " + std::to_string(t) + " does not match the architecture");
    }
    const std::size_t need = static_cast<std::size_t>(tensor.value.size()) * sizeof(double);
    if (bytes.size() < pos + need) throw Error(ErrorKind::kParse, "checkpoint truncated in tensor " + tensor.name);
    for (Eigen::Index i = 0; i < tensor.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < tensor.value.cols(); ++j) {
        std::memcpy(&tensor.value(i, j), bytes.data() + pos, sizeof(double));
        pos += sizeof(double);
      }
    }
  }
  if (pos != bytes.size()) throw Error(ErrorKind::kParse, "trailing bytes after checkpoint tensors");
  return p;
}

}  // namespace prepline
