#include "prepline/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"
#include "prepline/error.hpp"
#include "prepline/spatial.hpp"

namespace prepline {

namespace {

double ratio_or_convention(double num, double den, bool nothing_positive) {
  if (den > 0.0) return num / den;
  return nothing_positive ? 1.0 : 0.0;
}

DistanceSummary summarize(const std::vector<double>& d) {
  DistanceSummary s;
  if (d.empty()) return s;
  double sum = 0.0;
  for (double x : d) {
    s.max = std::max(s.max, x);
    sum += x;
  }
  s.mean = sum / static_cast<double>(d.size());
  double sq = 0.0;
  for (double x : d) sq += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(d.size()));
  return s;
}

std::vector<double> nearest_um(std::span<const Vec3> from, std::span<const Vec3> to) {
  const KdTree tree(std::vector<Vec3>(to.begin(), to.end()));
  std::vector<double> d;
  d.reserve(from.size());
  for (const Vec3& p : from) d.push_back(1000.0 * tree.nearest(p).second);
  return d;
}

}  // namespace

SegmentationScores scores_from_counts(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.tn < 0 || c.fn < 0) throw Error(ErrorKind::kValidation, "negative confusion count");
  const bool none = c.tp == 0 && c.fp == 0 && c.fn == 0;
  SegmentationScores s;
  s.counts = c;
  const double tp = static_cast<double>(c.tp);
  s.dsc = ratio_or_convention(2.0 * tp, 2.0 * tp + static_cast<double>(c.fp + c.fn), none);
  s.sen = ratio_or_convention(tp, static_cast<double>(c.tp + c.fn), none);
  s.ppv = ratio_or_convention(tp, static_cast<double>(c.tp + c.fp), none);
  return s;
}

SegmentationScores segmentation_metrics(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorKind::kShape, "metrics: " + std::to_string(predicted.size()) + " predicted labels vs " +
                                       std::to_string(truth.size()) + " truth labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int p = predicted[i];
    const int t = truth[i];
    if ((p != 0 && p != 1) || (t != 0 && t != 1)) throw Error(ErrorKind::kValidation, "metrics: labels must be 0 or 1");
    if (p == 1 && t == 1) ++c.tp;
    if (p == 1 && t == 0) ++c.fp;
    if (p == 0 && t == 0) ++c.tn;
    if (p == 0 && t == 1) ++c.fn;
  }
  return scores_from_counts(c);
}

DistanceStats margin_distance_stats(std::span<const Vec3> predicted, std::span<const Vec3> truth) {
  if (predicted.empty() || truth.empty()) throw Error(ErrorKind::kValidation, "distance stats need two nonempty point sets");
  const std::vector<double> forward = nearest_um(predicted, truth);
  std::vector<double> pooled = forward;
  const std::vector<double> backward = nearest_um(truth, predicted);
  pooled.insert(pooled.end(), backward.begin(), backward.end());
  return {summarize(forward), summarize(pooled)};
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::kShape, "spearman: inputs differ in length");
  if (x.size() < 3) throw Error(ErrorKind::kValidation, "spearman needs at least 3 pairs");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::kCorrelation, "spearman: an input is constant, correlation undefined");
  Correlation c;
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  if (std::abs(c.r) >= 1.0) {
    c.p = 0.0;
    return c;
  }
  const double t = c.r * std::sqrt((n - 2.0) / (1.0 - c.r * c.r));
  const boost::math::students_t dist(n - 2.0);
  c.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return c;
}

EvaluationRow evaluate_case(const std::string& case_id, std::span<const int> predicted_labels,
                            std::span<const int> truth_labels, std::span<const Vec3> predicted_margin,
                            std::span<const Vec3> truth_margin, double threshold_um) {
  EvaluationRow row;
  row.case_id = case_id;
  row.scores = segmentation_metrics(predicted_labels, truth_labels);
  row.distances = margin_distance_stats(predicted_margin, truth_margin);
  row.success = row.distances.directed.max <= threshold_um;
  return row;
}

int EvaluationReport::success_count() const {
  return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const EvaluationRow& r) { return r.success; }));
}

MeanStd EvaluationReport::aggregate(double (*field)(const EvaluationRow&)) const {
  MeanStd out;
  if (rows.empty()) return out;
  for (const EvaluationRow& r : rows) out.mean += field(r);
  out.mean /= static_cast<double>(rows.size());
  for (const EvaluationRow& r : rows) out.std += (field(r) - out.mean) * (field(r) - out.mean);
  out.std = std::sqrt(out.std / static_cast<double>(rows.size()));
  return out;
}

std::optional<Correlation> EvaluationReport::rating_correlation() const {
  std::vector<double> ratings;
  std::vector<double> means;
  for (const EvaluationRow& r : rows) {
    if (!r.rating) continue;
    ratings.push_back(*r.rating);
    means.push_back(r.distances.directed.mean);
  }
  if (ratings.size() < 3) return std::nullopt;
  try {
    return spearman(ratings, means);
  } catch (const Error&) {
    return std::nullopt;
  }
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string EvaluationReport::to_csv() const {
  std::ostringstream out;
  out << "case_id,rating,max_um,mean_um,std_um,success,dsc,sen,ppv,tp,fp,tn,fn,sym_max_um,sym_mean_um,sym_std_um\n";
  for (const EvaluationRow& r : rows) {
    out << r.case_id << ',' << (r.rating ? fmt(*r.rating) : std::string()) << ',' << fmt(r.distances.directed.max) << ','
        << fmt(r.distances.directed.mean) << ',' << fmt(r.distances.directed.std) << ',' << (r.success ? "true" : "false")
        << ',' << fmt(r.scores.dsc) << ',' << fmt(r.scores.sen) << ',' << fmt(r.scores.ppv) << ',' << r.scores.counts.tp
        << ',' << r.scores.counts.fp << ',' << r.scores.counts.tn << ',' << r.scores.counts.fn << ','
        << fmt(r.distances.symmetric.max) << ',' << fmt(r.distances.symmetric.mean) << ','
        << fmt(r.distances.symmetric.std) << '\n';
  }
  return out.str();
}

std::string EvaluationReport::to_json() const {
  using nlohmann::json;
  auto summary = [](const DistanceSummary& s) { return json{{"max_um", s.max}, {"mean_um", s.mean}, {"std_um", s.std}}; };
  json cases = json::array();
  for (const EvaluationRow& r : rows) {
    json c{{"case_id", r.case_id},
           {"dsc", r.scores.dsc},
           {"sen", r.scores.sen},
           {"ppv", r.scores.ppv},
           {"counts", {{"tp", r.scores.counts.tp}, {"fp", r.scores.counts.fp}, {"tn", r.scores.counts.tn}, {"fn", r.scores.counts.fn}}},
           {"distance", summary(r.distances.directed)},
           {"distance_symmetric", summary(r.distances.symmetric)},
           {"success", r.success}};
    c["rating"] = r.rating ? json(*r.rating) : json(nullptr);
    cases.push_back(std::move(c));
  }
  auto agg = [&](double (*f)(const EvaluationRow&)) {
    const MeanStd m = aggregate(f);
    return json{{"mean", m.mean}, {"std", m.std}};
  };
  json j{{"threshold_um", threshold_um},
         {"cases", cases},
         {"success_count", success_count()},
         {"case_count", rows.size()},
         {"aggregate",
          {{"dsc", agg([](const EvaluationRow& r) { return r.scores.dsc; })},
           {"sen", agg([](const EvaluationRow& r) { return r.scores.sen; })},
           {"ppv", agg([](const EvaluationRow& r) { return r.scores.ppv; })},
           {"max_um", agg([](const EvaluationRow& r) { return r.distances.directed.max; })},
           {"mean_um", agg([](const EvaluationRow& r) { return r.distances.directed.mean; })},
           {"std_um", agg([](const EvaluationRow& r) { return r.distances.directed.std; })}}}};
  if (const auto c = rating_correlation()) {
    j["rating_spearman"] = {{"r", c->r}, {"p", c->p}};
  }
  return j.dump(2) + "\n";
}

}  // namespace prepline
