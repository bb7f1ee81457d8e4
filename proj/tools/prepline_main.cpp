#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "prepline/error.hpp"
#include "prepline/mesh_io.hpp"
#include "prepline/pipeline.hpp"

using namespace prepline;
using nlohmann::json;

namespace {

struct Overrides {
  std::optional<int> target_faces;
  std::optional<int> augmentations;
  std::optional<int> folds;
  std::optional<int> epochs;
  std::optional<double> scale;
  std::optional<int> batch_size;
  std::optional<double> learning_rate;
  std::optional<std::string> ensemble;
  std::optional<double> lambda;
  std::optional<double> sigma;
  std::optional<int> samples;
  std::optional<double> threshold_um;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

struct Common {
  std::string manifest;
  std::string run_dir = "run";
  std::string config;
  bool quiet = false;
  Overrides o;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--manifest", c.manifest, "Manifest JSON, or a directory of <id>_die.stl files")->required();
  cmd->add_option("--run-dir", c.run_dir, "Run directory for artifacts and report.json");
  cmd->add_option("--config", c.config, "Config JSON; flags override it");
  cmd->add_option("--seed", c.o.seed, "Global seed");
  cmd->add_option("--jobs", c.o.jobs, "Worker threads");
  cmd->add_flag("--quiet", c.quiet, "Only print errors");
  cmd->add_option("--target-faces", c.o.target_faces, "Faces after decimation (default 10000)");
  cmd->add_option("--augmentations", c.o.augmentations, "Copies per training die (default 20)");
  cmd->add_option("--folds", c.o.folds, "Number of folds (default 5)");
  cmd->add_option("--epochs", c.o.epochs, "Epochs per fold (default 200)");
  cmd->add_option("--scale", c.o.scale, "Network width scale (default 1)");
  cmd->add_option("--batch-size", c.o.batch_size, "Mini-batch size (default 10)");
  cmd->add_option("--lr", c.o.learning_rate, "Adam learning rate (default 1e-3)");
  cmd->add_option("--ensemble", c.o.ensemble, "max-prob, democracy or fold-<k> (default max-prob)");
  cmd->add_option("--lambda", c.o.lambda, "Graph-cut smoothness weight (default 2)");
  cmd->add_option("--sigma", c.o.sigma, "Dihedral-angle scale in radians (default 0.5)");
  cmd->add_option("--samples", c.o.samples, "Points per margin line (default 5000)");
  cmd->add_option("--threshold-um", c.o.threshold_um, "Success threshold in micrometers (default 200)");
}

// Precedence: flags, then --config, then the run directory's config.json from
// an earlier command, then defaults. The result is saved back to the run
// directory so later stage commands hash to the same artifacts.
PipelineConfig resolve_config(const Common& c) {
  const fs::path saved = fs::path(c.run_dir) / "config.json";
  PipelineConfig cfg;
  if (!c.config.empty()) {
    cfg = PipelineConfig::load(c.config);
  } else if (fs::exists(saved)) {
    cfg = PipelineConfig::load(saved);
  }
  const Overrides& o = c.o;
  if (o.target_faces) cfg.target_faces = *o.target_faces;
  if (o.augmentations) cfg.augmentations = *o.augmentations;
  if (o.folds) cfg.folds = *o.folds;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.scale) cfg.width_scale = *o.scale;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.learning_rate) cfg.learning_rate = *o.learning_rate;
  if (o.ensemble) cfg.ensemble = *o.ensemble;
  if (o.lambda) cfg.lambda = *o.lambda;
  if (o.sigma) cfg.sigma = *o.sigma;
  if (o.samples) cfg.samples = *o.samples;
  if (o.threshold_um) cfg.threshold_um = *o.threshold_um;
  if (o.seed) cfg.seed = *o.seed;
  if (o.jobs) cfg.jobs = *o.jobs;
  cfg.validate();
  write_file(saved, cfg.to_json().dump(2) + "\n");
  return cfg;
}

void print_error(const Error& e, const std::string& stage, const std::string& case_id) {
  json err{{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}};
  err["stage"] = stage.empty() ? json(nullptr) : json(stage);
  err["case_id"] = case_id.empty() ? json(nullptr) : json(case_id);
  std::cerr << json{{"error", err}}.dump() << "\n";
}

void print_record(const StageRecord& r) {
  std::printf("%s: %zu artifact(s), %d cached, %.2f s\n", r.stage.c_str(), r.artifacts.size(), r.cached, r.seconds);
  for (const std::string& w : r.warnings) std::printf("  warning: %s\n", w.c_str());
}

void print_summary(const EvaluationReport& report) {
  const MeanStd dsc = report.aggregate([](const EvaluationRow& r) { return r.scores.dsc; });
  const MeanStd max_um = report.aggregate([](const EvaluationRow& r) { return r.distances.directed.max; });
  std::printf("cases %zu, success %d at %.0f um, DSC %.4f +- %.4f, max distance %.1f +- %.1f um\n",
              report.rows.size(), report.success_count(), report.threshold_um, dsc.mean, dsc.std, max_um.mean,
              max_um.std);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Die segmentation and margin line extraction pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "prepline 1.0");

  // synth
  std::string synth_out;
  int synth_count = 20;
  int synth_test = 0;
  std::uint64_t synth_seed = 0;
  CLI::App* synth = app.add_subcommand("synth", "Write a synthetic die dataset and manifest");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_count, "Training cases")->check(CLI::PositiveNumber);
  synth->add_option("--test-count", synth_test, "Extra cases with split \"test\"")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", synth_seed, "Dataset seed");

  Common c;
  std::string stage_name;
  std::optional<std::string> report_out;
  auto stage_cmd = [&](const char* name, const char* help) {
    CLI::App* cmd = app.add_subcommand(name, help);
    add_common(cmd, c);
    return cmd;
  };
  stage_cmd("label", "Label training dies from their crown bottoms");
  CLI::App* pre = stage_cmd("preprocess", "Register, decimate, normalize and compute features");
  CLI::App* aug = stage_cmd("augment", "Write augmented training copies");
  CLI::App* train = stage_cmd("train", "K-fold training of the segmentation network");
  CLI::App* predict = stage_cmd("predict", "Per-face probabilities from the fold models");
  CLI::App* refine = stage_cmd("refine", "Graph-cut refinement and component cleanup");
  CLI::App* extract = stage_cmd("extract", "Margin line extraction");
  CLI::App* evaluate = stage_cmd("evaluate", "Metrics against the crown-bottom ground truth");
  CLI::App* report = stage_cmd("report", "Finalize report.json and print it");
  report->add_option("--out", report_out, "Also copy the report to this path");
  CLI::App* pipeline = stage_cmd("pipeline", "Run every stage in sequence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error(Error(ErrorKind::kValidation, e.what()), "", "");
    return exit_code_for(ErrorKind::kValidation);
  }

  CLI::App* sub = app.get_subcommands().front();
  stage_name = sub->get_name();
  try {
    if (sub == synth) {
      const fs::path manifest = write_synthetic_dataset(synth_out, synth_count, synth_seed, synth_test);
      std::printf("%s\n", manifest.string().c_str());
      return 0;
    }
    const PipelineConfig cfg = resolve_config(c);
    const DatasetManifest manifest = load_manifest(c.manifest);
    const RunDirectory run(c.run_dir, cfg);
    auto log = [&](const std::string& line) {
      if (!c.quiet) std::printf("%s\n", line.c_str());
      std::fflush(stdout);
    };
    auto finish = [&](const StageRecord& r) {
      append_report(run, r);
      if (!c.quiet) print_record(r);
    };

    if (sub == pipeline) {
      const EvaluationReport rep = run_pipeline(manifest, run, log);
      if (!c.quiet && !rep.rows.empty()) print_summary(rep);
    } else if (stage_name == "label") {
      finish(run_label(manifest, run));
    } else if (sub == pre) {
      finish(run_preprocess(manifest, run));
    } else if (sub == aug) {
      finish(run_augment(manifest, run));
    } else if (sub == train) {
      finish(run_train(manifest, run, log));
    } else if (sub == predict) {
      finish(run_predict(manifest, run));
    } else if (sub == refine) {
      finish(run_refine(manifest, run));
    } else if (sub == extract) {
      finish(run_extract(manifest, run));
    } else if (sub == evaluate) {
      EvaluationReport rep;
      finish(run_evaluate(manifest, run, &rep));
      finalize_report(run, &rep);
      if (!c.quiet) print_summary(rep);
    } else if (sub == report) {
      finalize_report(run, nullptr);
      const fs::path js = run.artifact(Stage::kEvaluate, "evaluation.json");
      if (fs::exists(js)) {
        json j = json::parse(read_file(run.report_path()));
        j["evaluation"] = json::parse(read_file(js));
        write_file(run.report_path(), j.dump(2) + "\n");
      }
      const std::string text = read_file(run.report_path());
      if (report_out) write_file(*report_out, text);
      std::printf("%s", text.c_str());
    }
    return 0;
  } catch (const StageError& e) {
    print_error(e, e.stage(), e.case_id());
    return exit_code_for(e.kind());
  } catch (const Error& e) {
    print_error(e, stage_name, "");
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    print_error(Error(ErrorKind::kInternal, e.what()), stage_name, "");
    return exit_code_for(ErrorKind::kInternal);
  }
}
