#pragma once

#include <string>
#include <vector>

#include "prepline/segnet.hpp"

namespace prepline {

enum class EnsembleStrategy { kMaxProbability, kDemocracy };

EnsembleStrategy parse_ensemble_strategy(const std::string& text);
std::string to_string(EnsembleStrategy strategy);

struct EnsembleResult {
  std::vector<int> labels;
  ProbabilityField combined;
};

/// Per face, the model with the highest top-class probability decides; ties go
/// to the lower model index. The combined field carries the deciding row.
EnsembleResult combine_max_probability(const std::vector<ProbabilityField>& fields);

/// Per-face majority of the models' argmax labels. A tied vote goes to the
/// class with the larger summed probability across all models, then to 0.
/// The combined field is the mean of the inputs.
EnsembleResult combine_democracy(const std::vector<ProbabilityField>& fields);

EnsembleResult combine(const std::vector<ProbabilityField>& fields, EnsembleStrategy strategy);

/// Argmax per row; exact ties go to class 0.
std::vector<int> argmax_labels(const ProbabilityField& field);

}  // namespace prepline
