#include <filesystem>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "prepline/margin.hpp"
#include "prepline/mesh_io.hpp"
#include "prepline/pipeline.hpp"

using namespace prepline;
using nlohmann::json;

namespace {

ErrorKind kind_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kInternal;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("prepline_test_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

PipelineConfig tiny_config() {
  PipelineConfig c;
  c.target_faces = 600;
  c.augmentations = 1;
  c.folds = 2;
  c.epochs = 15;
  c.batch_size = 2;
  c.width_scale = 0.125;
  c.samples = 400;
  return c;
}

std::string slurp_tree(const fs::path& root, const std::string& stage) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root / stage)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const fs::path& f : files) all += fs::relative(f, root).string() + "\n" + read_file(f);
  return all;
}

}  // namespace

TEST_CASE("content hash is 64-bit FNV-1a") {
  CHECK(content_hash("") == "cbf29ce484222325");
  CHECK(content_hash("a") == "af63dc4c8601ec8c");
  CHECK(content_hash("foobar") == "85944171f73967e8");
}

TEST_CASE("config JSON round trip and validation") {
  PipelineConfig c = tiny_config();
  c.ensemble = "democracy";
  c.seed = 77;
  const PipelineConfig back = PipelineConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  CHECK(PipelineConfig::from_json(json::object()).to_json() == PipelineConfig{}.to_json());
  CHECK(PipelineConfig::from_json(json{{"train", {{"epochs", 7}}}}).epochs == 7);
  CHECK(kind_of([] { PipelineConfig::from_json(json{{"trian", json::object()}}); }) == ErrorKind::kValidation);
  CHECK(kind_of([] { PipelineConfig::from_json(json{{"train", {{"epoch", 3}}}}); }) == ErrorKind::kValidation);
  CHECK(kind_of([] { PipelineConfig::from_json(json{{"train", {{"epochs", "many"}}}}); }) == ErrorKind::kValidation);
  CHECK(kind_of([] { PipelineConfig::from_json(json{{"refine", {{"sigma", 0.0}}}}); }) == ErrorKind::kValidation);
  CHECK(kind_of([] { PipelineConfig::from_json(json{{"predict", {{"ensemble", "fold-9"}}}}); }) ==
        ErrorKind::kValidation);
  CHECK(PipelineConfig::from_json(json{{"predict", {{"ensemble", "fold-2"}}}}).ensemble == "fold-2");
  CHECK(kind_of([] { PipelineConfig::from_json(json{{"preprocess", {{"target_faces", 2}}}}); }) ==
        ErrorKind::kValidation);
}

TEST_CASE("stage hashes follow the dependency chain") {
  const PipelineConfig a = tiny_config();
  PipelineConfig b = a;
  b.lambda = 3.0;
  const RunDirectory ra("/tmp/x", a);
  const RunDirectory rb("/tmp/x", b);
  for (Stage s : {Stage::kLabel, Stage::kPreprocess, Stage::kAugment, Stage::kTrain, Stage::kPredict}) {
    CHECK(ra.stage_hash(s) == rb.stage_hash(s));
  }
  for (Stage s : {Stage::kRefine, Stage::kExtract, Stage::kEvaluate}) CHECK(ra.stage_hash(s) != rb.stage_hash(s));
  PipelineConfig c = a;
  c.target_faces = 700;
  const RunDirectory rc("/tmp/x", c);
  CHECK(rc.stage_hash(Stage::kLabel) == ra.stage_hash(Stage::kLabel));
  CHECK(rc.stage_hash(Stage::kPreprocess) != ra.stage_hash(Stage::kPreprocess));
  CHECK(rc.stage_hash(Stage::kEvaluate) != ra.stage_hash(Stage::kEvaluate));
  CHECK(ra.artifact(Stage::kTrain, "fold1.ckpt") == fs::path("/tmp/x/train") / ra.stage_hash(Stage::kTrain) / "fold1.ckpt");
}

TEST_CASE("manifest loading") {
  const fs::path dir = scratch("manifest");
  const fs::path manifest_path = write_synthetic_dataset(dir, 3, 5, 1, 48);
  const DatasetManifest m = load_manifest(manifest_path);
  REQUIRE(m.cases.size() == 4);
  CHECK(m.ids("train").size() == 3);
  CHECK(m.ids("test").size() == 1);
  CHECK(m.cases[0].tooth_position == 11);
  CHECK(m.cases[0].arch == Arch::kUpper);
  CHECK(m.cases[2].arch == Arch::kLower);
  CHECK(fs::exists(m.cases[1].die_path));

  SUBCASE("directory scan") {
    write_file(dir / "ratings.csv", "case_id,rating\nsynth001-21,3.5\n");
    const DatasetManifest scanned = load_manifest(dir);
    REQUIRE(scanned.cases.size() == 4);
    CHECK(scanned.cases[0].case_id == "synth000-11");
    CHECK(scanned.cases[1].tooth_position == 21);
    CHECK(scanned.cases[1].rating.value() == 3.5);
    CHECK(scanned.cases[3].arch == Arch::kLower);
    CHECK(scanned.cases[3].split == "train");
  }
  SUBCASE("errors") {
    json j = json::parse(read_file(manifest_path));
    j["cases"][1]["case_id"] = j["cases"][0]["case_id"];
    write_file(dir / "dup.json", j.dump());
    CHECK(kind_of([&] { load_manifest(dir / "dup.json"); }) == ErrorKind::kValidation);
    j = json::parse(read_file(manifest_path));
    j["cases"][0]["die"] = "missing.stl";
    write_file(dir / "missing.json", j.dump());
    CHECK(kind_of([&] { load_manifest(dir / "missing.json"); }) == ErrorKind::kValidation);
    j = json::parse(read_file(manifest_path));
    j["cases"][0]["rating"] = 5.0;
    write_file(dir / "rating.json", j.dump());
    CHECK(kind_of([&] { load_manifest(dir / "rating.json"); }) == ErrorKind::kValidation);
    write_file(dir / "broken.json", "{");
    CHECK(kind_of([&] { load_manifest(dir / "broken.json"); }) == ErrorKind::kParse);
    CHECK(kind_of([&] { load_manifest(dir / "nope.json"); }) == ErrorKind::kValidation);
  }
}

TEST_CASE("parallel_for rethrows the first failure in index order") {
  std::vector<int> hit(50, 0);
  parallel_for(hit.size(), 3, [&](std::size_t i) { hit[i] = 1; });
  CHECK(std::count(hit.begin(), hit.end(), 1) == 50);
  try {
    parallel_for(10, 1, [](std::size_t i) {
      if (i >= 4) throw Error(ErrorKind::kShape, "at " + std::to_string(i));
    });
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("at 4") != std::string::npos);
  }
}

TEST_CASE("end-to-end run is cached, reproducible and independent of jobs") {
  const fs::path data = scratch("data");
  const DatasetManifest m = load_manifest(write_synthetic_dataset(data, 4, 11, 1, 48));
  const fs::path root_a = scratch("run_a");
  const fs::path root_b = scratch("run_b");
  PipelineConfig cfg = tiny_config();
  const RunDirectory run_a(root_a, cfg);
  const EvaluationReport report = run_pipeline(m, run_a);
  CHECK(report.rows.size() == 5);
  for (const EvaluationRow& row : report.rows) {
    CHECK(row.scores.dsc >= 0.0);
    CHECK(row.scores.dsc <= 1.0);
  }
  for (const CaseEntry& c : m.cases) {
    const MarginLine line = margin_from_json(read_file(run_a.artifact(Stage::kExtract, c.case_id + ".margin.json")));
    CHECK(line.case_id == c.case_id);
    CHECK(line.points.size() == 400);
  }
  const json rep = json::parse(read_file(run_a.report_path()));
  CHECK(rep.at("stages").size() == 8);
  CHECK(rep.at("deterministic") == true);
  CHECK(rep.at("config") == cfg.to_json());

  // Rerunning finds everything in place.
  const std::string before = slurp_tree(root_a, "extract");
  CHECK(run_predict(m, run_a).cached == 5);
  CHECK(run_train(m, run_a).cached == 1);
  CHECK(slurp_tree(root_a, "extract") == before);

  cfg.jobs = 3;
  const RunDirectory run_b(root_b, cfg);
  run_pipeline(m, run_b);
  for (const char* stage : {"label", "preprocess", "augment", "train", "predict", "refine", "extract", "evaluate"}) {
    CHECK_MESSAGE(slurp_tree(root_a, stage) == slurp_tree(root_b, stage), stage);
  }

  SUBCASE("a changed refinement weight reuses upstream artifacts") {
    PipelineConfig c2 = tiny_config();
    c2.lambda = 4.0;
    const RunDirectory run_c(root_a, c2);
    CHECK(run_predict(m, run_c).cached == 5);
    CHECK(run_refine(m, run_c).cached == 0);
  }
  SUBCASE("missing upstream artifacts are reported") {
    PipelineConfig c3 = tiny_config();
    c3.epochs = 16;
    const RunDirectory run_d(root_a, c3);
    try {
      run_predict(m, run_d);
      FAIL("expected a missing-artifact error");
    } catch (const StageError& e) {
      CHECK(e.kind() == ErrorKind::kValidation);
      CHECK(e.stage() == "predict");
      CHECK(std::string(e.what()).find("prepline train") != std::string::npos);
    }
  }
}
