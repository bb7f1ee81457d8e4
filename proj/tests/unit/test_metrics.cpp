#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "doctest.h"
#include "prepline/error.hpp"
#include "prepline/metrics.hpp"

using namespace prepline;

namespace {

std::vector<Vec3> circle(int n, double r) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * i / n;
    pts.emplace_back(r * std::cos(a), r * std::sin(a), 0.0);
  }
  return pts;
}

}  // namespace

TEST_CASE("segmentation formulas") {
  const SegmentationScores s = scores_from_counts({8, 2, 88, 2});
  CHECK(s.dsc == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(s.sen == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(s.ppv == doctest::Approx(0.8).epsilon(1e-15));

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<long> count(0, 50);
  for (int trial = 0; trial < 200; ++trial) {
    const ConfusionCounts c{count(rng) + 1, count(rng), count(rng), count(rng)};
    const SegmentationScores r = scores_from_counts(c);
    CHECK(r.dsc == doctest::Approx(2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn)).epsilon(1e-15));
    CHECK(std::abs(r.dsc - 2.0 * r.ppv * r.sen / (r.ppv + r.sen)) <= 1e-12);
    CHECK(r.dsc >= 0.0);
    CHECK(r.dsc <= 1.0);
    CHECK((r.dsc == 1.0) == (c.fp == 0 && c.fn == 0));
  }
}

TEST_CASE("label-level metrics and conventions") {
  const std::vector<int> truth{1, 1, 0, 0, 1};
  SUBCASE("perfect") {
    const auto s = segmentation_metrics(truth, truth);
    CHECK(s.dsc == 1.0);
    CHECK(s.sen == 1.0);
    CHECK(s.ppv == 1.0);
    CHECK(s.counts.total() == 5);
  }
  SUBCASE("total miss") {
    const std::vector<int> zeros(5, 0);
    const auto s = segmentation_metrics(zeros, truth);
    CHECK(s.sen == 0.0);
    CHECK(s.dsc == 0.0);
    CHECK(s.ppv == 0.0);
  }
  SUBCASE("nothing positive anywhere") {
    const std::vector<int> zeros(5, 0);
    const auto s = segmentation_metrics(zeros, zeros);
    CHECK(s.dsc == 1.0);
    CHECK(s.sen == 1.0);
    CHECK(s.ppv == 1.0);
  }
  SUBCASE("length mismatch") {
    const std::vector<int> four{1, 0, 1, 0};
    CHECK_THROWS_AS(segmentation_metrics(four, truth), Error);
  }
}

TEST_CASE("distance statistics") {
  const auto truth = circle(20000, 1.0);
  SUBCASE("identical sets") {
    const DistanceStats d = margin_distance_stats(truth, truth);
    CHECK(d.directed.max == 0.0);
    CHECK(d.directed.mean == 0.0);
    CHECK(d.directed.std == 0.0);
  }
  SUBCASE("offset circle") {
    const auto pred = circle(5000, 1.0001);
    const DistanceStats d = margin_distance_stats(pred, truth);
    // Chord sagitta of the truth sampling is below 0.01 um.
    CHECK(d.directed.mean == doctest::Approx(0.1).epsilon(0.02));
    CHECK(d.directed.max == doctest::Approx(0.1).epsilon(0.02));
  }
  SUBCASE("one outlier") {
    auto pred = circle(500, 1.0);
    std::vector<Vec3> truth_small = pred;
    pred[17] *= 1.3;
    const DistanceStats d = margin_distance_stats(pred, truth_small);
    CHECK(d.directed.max == doctest::Approx(300.0).epsilon(1e-9));
    const EvaluationRow row = evaluate_case("x", std::vector<int>{1}, std::vector<int>{1}, pred, truth_small);
    CHECK_FALSE(row.success);
    CHECK(d.symmetric.max >= d.directed.max);
  }
  SUBCASE("rigid invariance") {
    const auto pred = circle(300, 1.05);
    const Eigen::Matrix3d r = Eigen::AngleAxisd(0.4, Vec3(0, 1, 1).normalized()).toRotationMatrix();
    std::vector<Vec3> a;
    std::vector<Vec3> b;
    for (const Vec3& p : pred) a.push_back(r * p + Vec3(1, 2, 3));
    for (const Vec3& p : truth) b.push_back(r * p + Vec3(1, 2, 3));
    const DistanceStats d0 = margin_distance_stats(pred, truth);
    const DistanceStats d1 = margin_distance_stats(a, b);
    CHECK(d1.directed.mean == doctest::Approx(d0.directed.mean).epsilon(1e-9));
    CHECK(d1.symmetric.max == doctest::Approx(d0.symmetric.max).epsilon(1e-9));
  }
}

TEST_CASE("success threshold") {
  const std::vector<Vec3> truth{Vec3(0, 0, 0)};
  const std::vector<int> one{1};
  auto at = [&](double um) {
    const std::vector<Vec3> pred{Vec3(um / 1000.0, 0, 0)};
    return evaluate_case("c", one, one, pred, truth).success;
  };
  CHECK(at(194.0));
  CHECK_FALSE(at(264.0));
  CHECK(at(200.0));
}

TEST_CASE("Spearman on the published ratings") {
  const std::vector<double> ratings{2.5, 3, 2, 2, 2, 3, 3, 2, 2, 3, 2, 2, 4};
  const std::vector<double> means{63, 72, 98, 74, 73, 42, 43, 82, 84, 74, 95, 61, 57};
  const Correlation c = spearman(ratings, means);
  CHECK(c.r == doctest::Approx(-0.683).epsilon(0.005 / 0.683));
  CHECK(std::abs(c.p - 0.010) <= 0.003);
}

TEST_CASE("Spearman properties") {
  const std::vector<double> x{1.0, 4.0, 2.0, 8.0, 5.0, 7.0};
  CHECK(spearman(x, x).r == doctest::Approx(1.0));
  std::vector<double> dec;
  for (double v : x) dec.push_back(-std::exp(v));
  CHECK(spearman(x, dec).r == doctest::Approx(-1.0));
  std::vector<double> y{3.0, 1.0, 2.0, 2.0, 9.0, 0.5};
  std::vector<double> y_mono;
  for (double v : y) y_mono.push_back(std::log(v) * 3.0 + 7.0);
  CHECK(spearman(x, y).r == spearman(x, y_mono).r);
  CHECK(average_ranks(std::vector<double>{5, 1, 5, 3}) == std::vector<double>{3.5, 1, 3.5, 2});
  try {
    spearman(x, std::vector<double>(6, 2.0));
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCorrelation);
  }
}

TEST_CASE("report serialization") {
  EvaluationReport report;
  const std::vector<Vec3> truth{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  const std::vector<int> labels{1, 0, 1};
  for (int i = 0; i < 4; ++i) {
    const std::vector<Vec3> pred{Vec3(0.05 * i, 0, 0)};
    EvaluationRow row = evaluate_case("c" + std::to_string(i), labels, labels, pred, truth);
    row.rating = 1.0 + i;
    report.rows.push_back(row);
  }
  CHECK(report.success_count() == 4);
  const std::string csv = report.to_csv();
  CHECK(csv.rfind("case_id,rating,max_um,mean_um,std_um,success", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(report.to_json().find("\"success_count\": 4") != std::string::npos);
  REQUIRE(report.rating_correlation().has_value());
  CHECK(report.rating_correlation()->r == doctest::Approx(1.0));
}
