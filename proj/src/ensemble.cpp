#include "prepline/ensemble.hpp"

#include "prepline/error.hpp"

namespace prepline {

EnsembleStrategy parse_ensemble_strategy(const std::string& text) {
  if (text == "max-prob" || text == "max_probability") return EnsembleStrategy::kMaxProbability;
  if (text == "democracy") return EnsembleStrategy::kDemocracy;
  throw Error(ErrorKind::kValidation, "unknown ensemble strategy '" + text + "' (max-prob or democracy)");
}

std::string to_string(EnsembleStrategy strategy) {
  return strategy == EnsembleStrategy::kMaxProbability ? "max-prob" : "democracy";
}

namespace {

void check_fields(const std::vector<ProbabilityField>& fields) {
  if (fields.empty()) throw Error(ErrorKind::kValidation, "ensemble needs at least one probability field");
  for (std::size_t m = 1; m < fields.size(); ++m) {
    if (fields[m].rows() != fields[0].rows()) {
      throw Error(ErrorKind::kShape, "ensemble: model " + std::to_string(m) + " has " +
                                         std::to_string(fields[m].rows()) + " faces, model 0 has " +
                                         std::to_string(fields[0].rows()));
    }
  }
}

}  // namespace

std::vector<int> argmax_labels(const ProbabilityField& field) {
  std::vector<int> out(static_cast<std::size_t>(field.rows()));
  for (Eigen::Index i = 0; i < field.rows(); ++i) out[static_cast<std::size_t>(i)] = field(i, 1) > field(i, 0) ? 1 : 0;
  return out;
}

EnsembleResult combine_max_probability(const std::vector<ProbabilityField>& fields) {
  check_fields(fields);
  const Eigen::Index n = fields[0].rows();
  EnsembleResult out;
  out.combined.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < fields.size(); ++m) {
      if (fields[m].row(i).maxCoeff() > fields[best].row(i).maxCoeff()) best = m;
    }
    out.combined.row(i) = fields[best].row(i);
  }
  out.labels = argmax_labels(out.combined);
  return out;
}

EnsembleResult combine_democracy(const std::vector<ProbabilityField>& fields) {
  check_fields(fields);
  const Eigen::Index n = fields[0].rows();
  EnsembleResult out;
  out.combined = ProbabilityField::Zero(n, 2);
  out.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    int votes = 0;
    for (const ProbabilityField& f : fields) {
      votes += f(i, 1) > f(i, 0) ? 1 : 0;
      out.combined.row(i) += f.row(i);
    }
    const int against = static_cast<int>(fields.size()) - votes;
    int label = votes > against ? 1 : 0;
    if (votes == against) label = out.combined(i, 1) > out.combined(i, 0) ? 1 : 0;
    out.labels[static_cast<std::size_t>(i)] = label;
  }
  out.combined /= static_cast<double>(fields.size());
  return out;
}

EnsembleResult combine(const std::vector<ProbabilityField>& fields, EnsembleStrategy strategy) {
  return strategy == EnsembleStrategy::kMaxProbability ? combine_max_probability(fields) : combine_democracy(fields);
}

}  // namespace prepline
