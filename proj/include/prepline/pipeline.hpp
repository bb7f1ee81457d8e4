#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "prepline/error.hpp"
#include "prepline/metrics.hpp"
#include "prepline/preprocess.hpp"

namespace prepline {

namespace fs = std::filesystem;

/// Every tunable of the pipeline. JSON keys mirror the field names inside
/// the section named in the comment; see docs/formats.md.
struct PipelineConfig {
  // "labeling"
  int max_dilation = 2;
  double min_region_fraction = 0.01;
  // "preprocess"
  int target_faces = 10000;
  // "features"
  bool vertex_coords = true;
  bool curvature = true;
  double radius_small = 0.1;
  double radius_large = 0.2;
  // "augment"
  int augmentations = 20;
  double rotation_x_deg = 45.0;  // symmetric range +-
  double rotation_y_deg = 45.0;
  double rotation_z_deg = 180.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  // "train"
  int folds = 5;
  int epochs = 200;
  double learning_rate = 1e-3;
  int batch_size = 10;
  int patch_size = 10000;
  double width_scale = 1.0;
  // "predict": "max-prob", "democracy" or "fold-<k>"
  std::string ensemble = "max-prob";
  // "out-of-fold": training cases are scored by the fold model that held them
  // out; "ensemble": by the same combination as test cases.
  std::string train_cases = "out-of-fold";
  // "refine"
  double lambda = 2.0;
  double sigma = 0.5;
  double epsilon = 1e-6;
  // "extract"
  int samples = 5000;
  // "evaluate"
  double threshold_um = 200.0;
  double smoothing_factor = 0.005;  // s = factor * (N - sqrt(2N)); recorded, fixed
  // top level
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are a validation error.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const fs::path& path);
};

struct CaseEntry {
  std::string case_id;
  fs::path die_path;
  std::optional<fs::path> crown_bottom_path;
  Arch arch = Arch::kLower;
  int tooth_position = 0;  // FDI 11, 21, 31 or 41; 0 when unknown
  std::optional<double> rating;
  std::string split = "train";  // "train" or "test"
};

struct DatasetManifest {
  std::vector<CaseEntry> cases;

  const CaseEntry& find(const std::string& case_id) const;
  std::vector<std::string> ids(const std::string& split = "") const;
  nlohmann::json to_json() const;
};

/// A JSON manifest file, or a directory scanned for `<id>_die.stl` with an
/// optional `<id>_crownbottom.stl`. Relative paths resolve against the
/// manifest's directory. Throws Error(kValidation) on duplicate ids, missing
/// files, bad ratings or bad tooth positions.
DatasetManifest load_manifest(const fs::path& path);

/// 16 hex digits of FNV-1a over `text`.
std::string content_hash(std::string_view text);

enum class Stage { kLabel, kPreprocess, kAugment, kTrain, kPredict, kRefine, kExtract, kEvaluate };
std::string to_string(Stage stage);

/// Artifacts live under <root>/<stage>/<hash>/, where the hash covers the
/// stage's own settings and the hashes of the stages it consumes.
class RunDirectory {
 public:
  RunDirectory(fs::path root, PipelineConfig config);

  const fs::path& root() const { return root_; }
  const PipelineConfig& config() const { return config_; }
  std::string stage_hash(Stage stage) const;
  fs::path stage_dir(Stage stage) const;
  fs::path artifact(Stage stage, const std::string& name) const;
  fs::path report_path() const { return root_ / "report.json"; }

 private:
  fs::path root_;
  PipelineConfig config_;
};

struct StageRecord {
  std::string stage;
  double seconds = 0.0;
  std::vector<std::string> artifacts;  // relative to the run root
  std::vector<std::string> warnings;
  int cached = 0;  // cases whose artifacts already existed
};

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. The first exception
/// in index order is rethrown after all workers finish.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

/// Failure of one stage for one case; the CLI turns it into error JSON.
class StageError : public Error {
 public:
  StageError(const Error& cause, std::string stage, std::string case_id)
      : Error(cause.kind(), cause.what()), stage_(std::move(stage)), case_id_(std::move(case_id)) {}
  const std::string& stage() const { return stage_; }
  const std::string& case_id() const { return case_id_; }

 private:
  std::string stage_;
  std::string case_id_;
};

StageRecord run_label(const DatasetManifest& manifest, const RunDirectory& run);
StageRecord run_preprocess(const DatasetManifest& manifest, const RunDirectory& run);
StageRecord run_augment(const DatasetManifest& manifest, const RunDirectory& run);
StageRecord run_train(const DatasetManifest& manifest, const RunDirectory& run,
                      const std::function<void(const std::string&)>& log = {});
StageRecord run_predict(const DatasetManifest& manifest, const RunDirectory& run);
StageRecord run_refine(const DatasetManifest& manifest, const RunDirectory& run);
StageRecord run_extract(const DatasetManifest& manifest, const RunDirectory& run);
/// Cases with ground truth only; `report` receives the evaluation.
StageRecord run_evaluate(const DatasetManifest& manifest, const RunDirectory& run, EvaluationReport* report = nullptr);

/// Appends a stage to <root>/report.json (creating it with the config snapshot
/// and seed) and rewrites it.
void append_report(const RunDirectory& run, const StageRecord& record);
/// Adds the evaluation summary and the determinism flag.
void finalize_report(const RunDirectory& run, const EvaluationReport* evaluation);

/// label -> preprocess -> augment -> train -> predict -> refine -> extract ->
/// evaluate -> report.
EvaluationReport run_pipeline(const DatasetManifest& manifest, const RunDirectory& run,
                              const std::function<void(const std::string&)>& log = {});

/// Writes `count` synthetic dies (binary STL die + crown bottom) and a
/// manifest.json into `dir`; returns the manifest path. `test_count` extra
/// cases get split "test".
fs::path write_synthetic_dataset(const fs::path& dir, int count, std::uint64_t seed, int test_count = 0,
                                 int segments = 96);

}  // namespace prepline
