#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "prepline/features.hpp"

namespace prepline {

/// Per-face class probabilities, one row per face, rows summing to 1.
using ProbabilityField = Eigen::MatrixX2d;

struct NetworkConfig {
  int in_channels = 18;
  /// Multiplies every hidden width; 1 is the published architecture.
  double width_scale = 1.0;

  /// Published width `n` scaled and rounded, at least 1.
  int width(int n) const;
};

struct Tensor {
  std::string name;
  Eigen::MatrixXd value;
};

/// Weights are stored input-major (in x out) and applied as X * W + b, so
/// every layer acts on the rows (faces) independently.
///
/// Layers, with published widths:
///   ftm.c1 C->64, ftm.c2 64->128, max-pool, ftm.g1 128->64, ftm.out 64->C*C
///   mlp1.l1 C->64, mlp1.l2 64->64
///   glm1.self 64->32, glm1.small 64->32 (after A_S), glm1.fuse 64->64
///   mlp2.l1 64->64, mlp2.l2 64->128, mlp2.l3 128->512
///   glm2.self / glm2.small / glm2.large 512->128 each, glm2.fuse 384->512
///   max-pool, broadcast; dense fusion of [mlp1, glm1, glm2, global] (1152)
///   mlp3.l1 1152->256, mlp3.l2 256->128, cls 128->2, softmax
struct NetworkParams {
  NetworkConfig config;
  std::vector<Tensor> tensors;

  std::size_t parameter_count() const;
  const Eigen::MatrixXd& get(const std::string& name) const;
  Eigen::MatrixXd& get(const std::string& name);
  bool all_finite() const;
};

/// He-initialized weights, zero biases, and an FTM output layer whose bias is
/// the flattened identity with near-zero weights, so the initial transform is
/// the identity.
NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed);

/// Same tensor layout as `params`, all zero.
NetworkParams zeros_like(const NetworkParams& params);

/// Throws Error(kShape) naming the stage when the inputs do not match.
ProbabilityField forward(const NetworkParams& params, const Eigen::MatrixXd& features, const AdjacencyPair& adj);

/// Which ReLU units are active and which rows win each max-pool, packed as
/// bytes. The network is smooth in its parameters wherever this is constant,
/// so finite-difference checks compare it at both ends of the stencil.
std::string activation_signature(const NetworkParams& params, const Eigen::MatrixXd& features,
                                 const AdjacencyPair& adj);

/// Generalized Dice loss (class weights 1 / max(volume, 1)^2) plus mean
/// cross-entropy.
struct LossParts {
  double dice = 0.0;
  double cross_entropy = 0.0;
  double total() const { return dice + cross_entropy; }
};
LossParts loss(const ProbabilityField& probs, std::span<const int> labels);

struct LossAndGradients {
  double loss = 0.0;
  ProbabilityField probs;
  NetworkParams gradients;
};

/// Exact gradients of loss(forward(...), labels) with respect to every tensor.
LossAndGradients gradients(const NetworkParams& params, const Eigen::MatrixXd& features, const AdjacencyPair& adj,
                           std::span<const int> labels);

struct TrainSample {
  std::string case_id;  // augmented copies share their base case id
  bool augmented = false;
  Eigen::MatrixXd features;
  AdjacencyPair adjacency;
  std::vector<int> labels;
};

/// Mean of per-sample gradients (and losses) over a batch, reduced in order.
LossAndGradients batch_gradients(const NetworkParams& params, const std::vector<const TrainSample*>& batch);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 200;
  int classes = 2;
  /// Faces per sample; larger meshes are subsampled to this many faces.
  int patch_size = 10000;
  std::uint64_t seed = 0;
};

struct FoldAssignment {
  int k = 5;
  std::map<std::string, int> fold_of;  // case id -> fold in [1, k]

  std::vector<std::string> cases_in(int fold) const;
};

/// Seeded shuffle, then round-robin assignment: fold sizes differ by at most 1.
/// Throws Error(kValidation) with fewer cases than folds or duplicate ids.
FoldAssignment kfold_split(const std::vector<std::string>& case_ids, int k, std::uint64_t seed);

struct HistoryRow {
  int epoch = 0;
  int fold = 1;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct FoldResult {
  NetworkParams best;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<HistoryRow> history;
};

struct TrainResult {
  std::vector<FoldResult> folds;

  std::vector<HistoryRow> history() const;
};

using ProgressFn = std::function<void(const HistoryRow&)>;

/// Adam on one training set, keeping the parameters with the lowest
/// validation loss (training loss when `validation` is empty).
FoldResult train_fold(const std::vector<const TrainSample*>& training,
                      const std::vector<const TrainSample*>& validation, const TrainConfig& config,
                      const NetworkConfig& net, int fold, const ProgressFn& progress = {});

/// One model per fold, each trained on the other folds and validated on the
/// original (non-augmented) samples of its own fold.
TrainResult train(const std::vector<TrainSample>& dataset, const FoldAssignment& folds, const TrainConfig& config,
                  const NetworkConfig& net, const ProgressFn& progress = {});

/// Faces `rows` of a sample, with both adjacency matrices restricted to those
/// faces and re-normalized.
TrainSample extract_patch(const TrainSample& sample, const std::vector<int>& rows);

/// CSV `epoch,fold,train_loss,val_loss`.
std::string history_csv(const std::vector<HistoryRow>& rows);

/// Versioned container: magic "PLNET\0\0\1", u32 header length, JSON
/// architecture header, then each tensor as row-major float64.
std::string serialize_params(const NetworkParams& params);
NetworkParams deserialize_params(std::string_view bytes);

/// JSON architecture descriptor (stage widths and tensor shapes).
std::string architecture_json(const NetworkParams& params);

}  // namespace prepline
