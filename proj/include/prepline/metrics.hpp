#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prepline/mesh.hpp"

namespace prepline {

struct ConfusionCounts {
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;

  long total() const { return tp + fp + tn + fn; }
};

/// DSC = 2TP/(2TP+FP+FN), SEN = TP/(TP+FN), PPV = TP/(TP+FP). A zero
/// denominator gives 1 when nothing is positive anywhere (no TP, FP or FN)
/// and 0 otherwise.
struct SegmentationScores {
  ConfusionCounts counts;
  double dsc = 0.0;
  double sen = 0.0;
  double ppv = 0.0;
};

SegmentationScores scores_from_counts(const ConfusionCounts& counts);
/// Throws Error(kShape) on a length mismatch, Error(kValidation) on labels
/// other than 0/1.
SegmentationScores segmentation_metrics(std::span<const int> predicted, std::span<const int> truth);

/// Micrometers.
struct DistanceSummary {
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population
};

struct DistanceStats {
  DistanceSummary directed;   // predicted -> truth
  DistanceSummary symmetric;  // both directions pooled
};

/// Nearest-neighbor distances from each predicted point to the truth points
/// (inputs in mm, results in um), plus the pooled two-way variant.
DistanceStats margin_distance_stats(std::span<const Vec3> predicted, std::span<const Vec3> truth);

struct Correlation {
  double r = 0.0;
  double p = 1.0;  // two-sided
};

/// Spearman rank correlation with average ranks for ties; p from the
/// t approximation with n - 2 degrees of freedom. Throws Error(kCorrelation)
/// for constant input and Error(kValidation) for fewer than 3 pairs.
Correlation spearman(std::span<const double> x, std::span<const double> y);

/// Average (fractional) ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> values);

struct EvaluationRow {
  std::string case_id;
  SegmentationScores scores;
  DistanceStats distances;
  bool success = false;
  std::optional<double> rating;
};

/// Success when the directed maximum distance is at most `threshold_um`.
EvaluationRow evaluate_case(const std::string& case_id, std::span<const int> predicted_labels,
                            std::span<const int> truth_labels, std::span<const Vec3> predicted_margin,
                            std::span<const Vec3> truth_margin, double threshold_um = 200.0);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct EvaluationReport {
  std::vector<EvaluationRow> rows;
  double threshold_um = 200.0;

  int success_count() const;
  MeanStd aggregate(double (*field)(const EvaluationRow&)) const;
  /// Spearman of ratings against directed mean distance, when at least three
  /// rows carry a rating.
  std::optional<Correlation> rating_correlation() const;

  /// One row per case: case_id, rating, max_um, mean_um, std_um, success,
  /// then DSC/SEN/PPV, confusion counts and the symmetric distances.
  std::string to_csv() const;
  std::string to_json() const;
};

}  // namespace prepline
