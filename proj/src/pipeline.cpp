#include "prepline/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <Eigen/Geometry>

#include "prepline/ensemble.hpp"
#include "prepline/error.hpp"
#include "prepline/features.hpp"
#include "prepline/labeling.hpp"
#include "prepline/margin.hpp"
#include "prepline/mesh_io.hpp"
#include "prepline/refine.hpp"
#include "prepline/segnet.hpp"
#include "prepline/synth.hpp"

namespace prepline {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorKind::kValidation, "config: " + what);
  };
  require(max_dilation >= 0, "labeling.max_dilation must be >= 0");
  require(min_region_fraction >= 0.0 && min_region_fraction < 0.5, "labeling.min_region_fraction must be in [0, 0.5)");
  require(target_faces >= 4, "preprocess.target_faces must be >= 4");
  require(radius_small > 0.0 && radius_small <= radius_large, "features radii must satisfy 0 < radius_small <= radius_large");
  require(augmentations >= 0, "augment.augmentations must be >= 0");
  require(rotation_x_deg >= 0 && rotation_y_deg >= 0 && rotation_z_deg >= 0, "augment rotation ranges must be >= 0");
  require(scale_min > 0.0 && scale_min <= scale_max, "augment scale range must satisfy 0 < scale_min <= scale_max");
  require(folds >= 1, "train.folds must be >= 1");
  require(epochs >= 1 && batch_size >= 1 && patch_size >= 1, "train.epochs, batch_size and patch_size must be positive");
  require(learning_rate > 0.0 && width_scale > 0.0, "train.learning_rate and width_scale must be positive");
  require(ensemble == "max-prob" || ensemble == "democracy" || std::regex_match(ensemble, std::regex("fold-[0-9]+")),
          "predict.ensemble must be max-prob, democracy or fold-<k>");
  require(train_cases == "out-of-fold" || train_cases == "ensemble",
          "predict.train_cases must be out-of-fold or ensemble");
  if (ensemble.rfind("fold-", 0) == 0) {
    const int k = std::stoi(ensemble.substr(5));
    require(k >= 1 && k <= folds, "predict.ensemble fold index out of range");
  }
  GraphCutConfig{lambda, sigma, epsilon}.validate();
  require(samples >= 8, "extract.samples must be >= 8");
  require(threshold_um > 0.0, "evaluate.threshold_um must be positive");
  require(smoothing_factor == 0.005, "extract.smoothing_factor is fixed at 0.005");
  require(jobs >= 1, "jobs must be >= 1");
}

json PipelineConfig::to_json() const {
  return json{
      {"labeling", {{"max_dilation", max_dilation}, {"min_region_fraction", min_region_fraction}}},
      {"preprocess", {{"target_faces", target_faces}}},
      {"features",
       {{"vertex_coords", vertex_coords},
        {"curvature", curvature},
        {"radius_small", radius_small},
        {"radius_large", radius_large}}},
      {"augment",
       {{"augmentations", augmentations},
        {"rotation_x_deg", rotation_x_deg},
        {"rotation_y_deg", rotation_y_deg},
        {"rotation_z_deg", rotation_z_deg},
        {"scale_min", scale_min},
        {"scale_max", scale_max}}},
      {"train",
       {{"folds", folds},
        {"epochs", epochs},
        {"learning_rate", learning_rate},
        {"batch_size", batch_size},
        {"patch_size", patch_size},
        {"width_scale", width_scale}}},
      {"predict", {{"ensemble", ensemble}, {"train_cases", train_cases}}},
      {"refine", {{"lambda", lambda}, {"sigma", sigma}, {"epsilon", epsilon}}},
      {"extract", {{"samples", samples}, {"smoothing_factor", smoothing_factor}}},
      {"evaluate", {{"threshold_um", threshold_um}}},
      {"seed", seed},
      {"jobs", jobs},
  };
}

namespace {

template <typename T>
void take(const json& section, const std::string& sname, const char* key, T& field, std::set<std::string>& seen) {
  if (!section.contains(key)) return;
  seen.insert(key);
  try {
    field = section.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, "config: " + sname + "." + key + ": " + e.what());
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "config must be a JSON object");
  PipelineConfig c;
  const json defaults = c.to_json();
  for (const auto& [name, value] : j.items()) {
    if (!defaults.contains(name)) throw Error(ErrorKind::kValidation, "config: unknown key '" + name + "'");
    if (defaults.at(name).is_object()) {
      if (!value.is_object()) throw Error(ErrorKind::kValidation, "config: '" + name + "' must be an object");
      for (const auto& [key, _] : value.items()) {
        if (!defaults.at(name).contains(key)) {
          throw Error(ErrorKind::kValidation, "config: unknown key '" + name + "." + key + "'");
        }
      }
    }
  }
  auto section = [&](const char* name) { return j.contains(name) ? j.at(name) : json::object(); };
  std::set<std::string> seen;
  const json lab = section("labeling");
  take(lab, "labeling", "max_dilation", c.max_dilation, seen);
  take(lab, "labeling", "min_region_fraction", c.min_region_fraction, seen);
  take(section("preprocess"), "preprocess", "target_faces", c.target_faces, seen);
  const json feat = section("features");
  take(feat, "features", "vertex_coords", c.vertex_coords, seen);
  take(feat, "features", "curvature", c.curvature, seen);
  take(feat, "features", "radius_small", c.radius_small, seen);
  take(feat, "features", "radius_large", c.radius_large, seen);
  const json aug = section("augment");
  take(aug, "augment", "augmentations", c.augmentations, seen);
  take(aug, "augment", "rotation_x_deg", c.rotation_x_deg, seen);
  take(aug, "augment", "rotation_y_deg", c.rotation_y_deg, seen);
  take(aug, "augment", "rotation_z_deg", c.rotation_z_deg, seen);
  take(aug, "augment", "scale_min", c.scale_min, seen);
  take(aug, "augment", "scale_max", c.scale_max, seen);
  const json tr = section("train");
  take(tr, "train", "folds", c.folds, seen);
  take(tr, "train", "epochs", c.epochs, seen);
  take(tr, "train", "learning_rate", c.learning_rate, seen);
  take(tr, "train", "batch_size", c.batch_size, seen);
  take(tr, "train", "patch_size", c.patch_size, seen);
  take(tr, "train", "width_scale", c.width_scale, seen);
  take(section("predict"), "predict", "ensemble", c.ensemble, seen);
  take(section("predict"), "predict", "train_cases", c.train_cases, seen);
  const json ref = section("refine");
  take(ref, "refine", "lambda", c.lambda, seen);
  take(ref, "refine", "sigma", c.sigma, seen);
  take(ref, "refine", "epsilon", c.epsilon, seen);
  const json ex = section("extract");
  take(ex, "extract", "samples", c.samples, seen);
  take(ex, "extract", "smoothing_factor", c.smoothing_factor, seen);
  take(section("evaluate"), "evaluate", "threshold_um", c.threshold_um, seen);
  take(j, "", "seed", c.seed, seen);
  take(j, "", "jobs", c.jobs, seen);
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, "config " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest

const CaseEntry& DatasetManifest::find(const std::string& case_id) const {
  for (const CaseEntry& c : cases) {
    if (c.case_id == case_id) return c;
  }
  throw Error(ErrorKind::kValidation, "unknown case id " + case_id);
}

std::vector<std::string> DatasetManifest::ids(const std::string& split) const {
  std::vector<std::string> out;
  for (const CaseEntry& c : cases) {
    if (split.empty() || c.split == split) out.push_back(c.case_id);
  }
  return out;
}

json DatasetManifest::to_json() const {
  json arr = json::array();
  for (const CaseEntry& c : cases) {
    json e{{"case_id", c.case_id}, {"die", c.die_path.string()}, {"arch", to_string(c.arch)}, {"split", c.split}};
    if (c.crown_bottom_path) e["crown_bottom"] = c.crown_bottom_path->string();
    if (c.tooth_position != 0) e["tooth"] = c.tooth_position;
    if (c.rating) e["rating"] = *c.rating;
    arr.push_back(std::move(e));
  }
  return json{{"cases", arr}};
}

namespace {

Arch arch_for_tooth(int tooth) { return (tooth == 11 || tooth == 21) ? Arch::kUpper : Arch::kLower; }

void check_manifest(const DatasetManifest& m) {
  if (m.cases.empty()) throw Error(ErrorKind::kValidation, "manifest has no cases");
  std::set<std::string> ids;
  for (const CaseEntry& c : m.cases) {
    if (c.case_id.empty() || c.case_id.find_first_of("/\\") != std::string::npos) {
      throw Error(ErrorKind::kValidation, "invalid case id '" + c.case_id + "'");
    }
    if (!ids.insert(c.case_id).second) throw Error(ErrorKind::kValidation, "duplicate case id " + c.case_id);
    if (!fs::exists(c.die_path)) {
      throw Error(ErrorKind::kValidation, "case " + c.case_id + ": die file not found: " + c.die_path.string());
    }
    if (c.crown_bottom_path && !fs::exists(*c.crown_bottom_path)) {
      throw Error(ErrorKind::kValidation,
                  "case " + c.case_id + ": crown bottom file not found: " + c.crown_bottom_path->string());
    }
    if (c.rating && !(*c.rating >= 1.0 && *c.rating <= 4.0)) {
      throw Error(ErrorKind::kValidation, "case " + c.case_id + ": rating must be within [1, 4]");
    }
    if (c.tooth_position != 0 && c.tooth_position != 11 && c.tooth_position != 21 && c.tooth_position != 31 &&
        c.tooth_position != 41) {
      throw Error(ErrorKind::kValidation, "case " + c.case_id + ": tooth position must be 11, 21, 31 or 41");
    }
    if (c.split != "train" && c.split != "test") {
      throw Error(ErrorKind::kValidation, "case " + c.case_id + ": split must be train or test");
    }
    if (c.split == "train" && !c.crown_bottom_path) {
      throw Error(ErrorKind::kValidation, "case " + c.case_id + ": training cases need a crown bottom");
    }
  }
}

DatasetManifest scan_directory(const fs::path& dir) {
  DatasetManifest m;
  std::vector<fs::path> dies;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = "_die.stl";
    if (entry.is_regular_file() && name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      dies.push_back(entry.path());
    }
  }
  std::sort(dies.begin(), dies.end());
  std::map<std::string, double> ratings;
  if (fs::exists(dir / "ratings.csv")) {
    std::istringstream in(read_file(dir / "ratings.csv"));
    std::string line;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      try {
        ratings[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
      } catch (const std::exception&) {
        // header or malformed row
      }
    }
  }
  const std::regex tooth_suffix(".*[-_](11|21|31|41)$");
  for (const fs::path& die : dies) {
    const std::string name = die.filename().string();
    CaseEntry c;
    c.case_id = name.substr(0, name.size() - std::string("_die.stl").size());
    c.die_path = die;
    const fs::path crown = dir / (c.case_id + "_crownbottom.stl");
    if (fs::exists(crown)) c.crown_bottom_path = crown;
    std::smatch match;
    if (std::regex_match(c.case_id, match, tooth_suffix)) c.tooth_position = std::stoi(match[1]);
    c.arch = arch_for_tooth(c.tooth_position);
    c.split = c.crown_bottom_path ? "train" : "test";
    if (ratings.contains(c.case_id)) c.rating = ratings.at(c.case_id);
    m.cases.push_back(std::move(c));
  }
  return m;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kValidation, "manifest not found: " + path.string());
  DatasetManifest m;
  if (fs::is_directory(path)) {
    m = scan_directory(path);
    if (m.cases.empty()) {
      throw Error(ErrorKind::kValidation, "no '<id>_die.stl' files in " + path.string());
    }
  } else {
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    try {
      const json j = json::parse(read_file(path));
      for (const json& e : j.at("cases")) {
        CaseEntry c;
        c.case_id = e.at("case_id").get<std::string>();
        c.die_path = resolve(e.at("die").get<std::string>());
        if (e.contains("crown_bottom") && !e.at("crown_bottom").is_null()) {
          c.crown_bottom_path = resolve(e.at("crown_bottom").get<std::string>());
        }
        c.tooth_position = e.value("tooth", 0);
        c.arch = e.contains("arch") ? parse_arch(e.at("arch").get<std::string>()) : arch_for_tooth(c.tooth_position);
        if (e.contains("rating") && !e.at("rating").is_null()) c.rating = e.at("rating").get<double>();
        c.split = e.value("split", std::string("train"));
        m.cases.push_back(std::move(c));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, "manifest " + path.string() + ": " + e.what());
    }
  }
  check_manifest(m);
  return m;
}

// ---------------------------------------------------------------------------
// Run directory

std::string content_hash(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kLabel: return "label";
    case Stage::kPreprocess: return "preprocess";
    case Stage::kAugment: return "augment";
    case Stage::kTrain: return "train";
    case Stage::kPredict: return "predict";
    case Stage::kRefine: return "refine";
    case Stage::kExtract: return "extract";
    case Stage::kEvaluate: return "evaluate";
  }
  return "unknown";
}

RunDirectory::RunDirectory(fs::path root, PipelineConfig config) : root_(std::move(root)), config_(std::move(config)) {
  config_.validate();
}

std::string RunDirectory::stage_hash(Stage stage) const {
  const json c = config_.to_json();
  json key{{"stage", to_string(stage)}};
  switch (stage) {
    case Stage::kLabel:
      key["labeling"] = c["labeling"];
      key["samples"] = c["extract"]["samples"];
      break;
    case Stage::kPreprocess:
      key["preprocess"] = c["preprocess"];
      key["features"] = c["features"];
      key["upstream"] = stage_hash(Stage::kLabel);
      break;
    case Stage::kAugment:
      key["augment"] = c["augment"];
      key["seed"] = c["seed"];
      key["upstream"] = stage_hash(Stage::kPreprocess);
      break;
    case Stage::kTrain:
      key["train"] = c["train"];
      key["seed"] = c["seed"];
      key["upstream"] = stage_hash(Stage::kAugment);
      break;
    case Stage::kPredict:
      key["predict"] = c["predict"];
      key["upstream"] = stage_hash(Stage::kTrain);
      break;
    case Stage::kRefine:
      key["refine"] = c["refine"];
      key["upstream"] = stage_hash(Stage::kPredict);
      break;
    case Stage::kExtract:
      key["extract"] = c["extract"];
      key["upstream"] = stage_hash(Stage::kRefine);
      break;
    case Stage::kEvaluate:
      key["evaluate"] = c["evaluate"];
      key["upstream"] = stage_hash(Stage::kExtract);
      break;
  }
  return content_hash(key.dump());
}

fs::path RunDirectory::stage_dir(Stage stage) const { return root_ / to_string(stage) / stage_hash(stage); }

fs::path RunDirectory::artifact(Stage stage, const std::string& name) const { return stage_dir(stage) / name; }

// ---------------------------------------------------------------------------
// Helpers

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::vector<std::thread> workers;
    for (int w = 0; w < std::min<int>(jobs, static_cast<int>(n)); ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
            failed = true;
          }
        }
      });
    }
    for (std::thread& t : workers) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace {

using Clock = std::chrono::steady_clock;

std::string labels_text(std::span<const int> labels) {
  std::string out;
  out.reserve(labels.size() * 2);
  for (int l : labels) {
    out += static_cast<char>('0' + l);
    out += '\n';
  }
  return out;
}

std::vector<int> read_labels(const fs::path& path) {
  std::vector<int> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line == "0" || line == "1") {
      out.push_back(line[0] - '0');
    } else if (!line.empty()) {
      throw Error(ErrorKind::kParse, path.string() + ": labels must be 0 or 1, one per line");
    }
  }
  return out;
}

std::string probs_text(const ProbabilityField& p) {
  std::string out;
  char buf[64];
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p(i, 0), p(i, 1));
    out += buf;
  }
  return out;
}

ProbabilityField read_probs(const fs::path& path) {
  std::vector<std::pair<double, double>> rows;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorKind::kParse, path.string() + ": expected p0,p1 per line");
    rows.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  ProbabilityField p(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    p(static_cast<Eigen::Index>(i), 0) = rows[i].first;
    p(static_cast<Eigen::Index>(i), 1) = rows[i].second;
  }
  return p;
}

LoadedMesh load_artifact_mesh(const fs::path& path) {
  LoadOptions exact;
  exact.weld_tolerance = 0.0;
  return load_mesh(path, MeshFormat::kPly, exact);
}

struct StoredTransform {
  RigidTransform registration;
  NormalizationTransform normalization;
};

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 json_vec(const json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

std::string transform_text(const StoredTransform& t, std::size_t faces_in, std::size_t faces_out) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back(vec_json(t.registration.rotation.row(r).transpose()));
  return json{{"rotation", rot},
              {"translation", vec_json(t.registration.translation)},
              {"normalization_mean", vec_json(t.normalization.mean)},
              {"normalization_std", vec_json(t.normalization.stddev)},
              {"faces_in", faces_in},
              {"faces_out", faces_out}}
             .dump(2) +
         "\n";
}

StoredTransform read_transform(const fs::path& path) {
  try {
    const json j = json::parse(read_file(path));
    StoredTransform t;
    for (int r = 0; r < 3; ++r) t.registration.rotation.row(r) = json_vec(j.at("rotation").at(r)).transpose();
    t.registration.translation = json_vec(j.at("translation"));
    t.normalization.mean = json_vec(j.at("normalization_mean"));
    t.normalization.stddev = json_vec(j.at("normalization_std"));
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

void require_artifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kValidation,
                "missing artifact " + path.string() + "; run `prepline " + producer + "` with the same config first");
  }
}

std::string rel(const RunDirectory& run, const fs::path& p) { return fs::relative(p, run.root()).generic_string(); }

FeatureOptions feature_options(const PipelineConfig& c) { return FeatureOptions{c.vertex_coords, c.curvature}; }

// Features and adjacency for a mesh in millimeters.
std::string feature_bytes(const TriangleMesh& mm_mesh, const PipelineConfig& c, NormalizationTransform* norm_out,
                          std::vector<std::string>* warnings) {
  const Normalization norm = normalize(mm_mesh);
  std::vector<double> curvature;
  if (c.curvature) {
    CurvatureResult cr = compute_mean_curvature(mm_mesh);
    curvature = std::move(cr.values);
    if (warnings != nullptr) warnings->insert(warnings->end(), cr.warnings.begin(), cr.warnings.end());
  }
  const CellFeatures feats = assemble_features(norm.mesh, feature_options(c), curvature);
  const AdjacencyPair adj = build_adjacency(norm.mesh.barycenters(), c.radius_small, c.radius_large);
  if (norm_out != nullptr) *norm_out = norm.transform;
  return serialize_features(feats, adj);
}

// Raw die exactly as loaded for every stage.
TriangleMesh load_die(const CaseEntry& c) { return load_mesh(c.die_path).mesh; }

// Resamples a closed polyline to `count` points evenly spaced by arc length.
std::vector<Vec3> resample_loop(std::span<const Vec3> loop, int count) {
  std::vector<double> cumulative{0.0};
  for (std::size_t i = 0; i < loop.size(); ++i) {
    cumulative.push_back(cumulative.back() + (loop[(i + 1) % loop.size()] - loop[i]).norm());
  }
  const double total = cumulative.back();
  std::vector<Vec3> out;
  std::size_t seg = 0;
  for (int k = 0; k < count; ++k) {
    const double s = total * k / count;
    while (seg + 1 < loop.size() && cumulative[seg + 1] <= s) ++seg;
    const double len = cumulative[seg + 1] - cumulative[seg];
    const double a = len > 0.0 ? (s - cumulative[seg]) / len : 0.0;
    out.push_back(loop[seg] + a * (loop[(seg + 1) % loop.size()] - loop[seg]));
  }
  return out;
}

struct CaseWork {
  std::vector<std::string> artifacts;
  std::vector<std::string> warnings;
  bool cached = false;
};

// Runs `body` for every selected case, collecting results in manifest order.
StageRecord for_cases(const std::string& stage, const DatasetManifest& manifest, const RunDirectory& run,
                      const std::function<bool(const CaseEntry&)>& selected,
                      const std::function<CaseWork(const CaseEntry&)>& body) {
  const auto start = Clock::now();
  std::vector<const CaseEntry*> todo;
  for (const CaseEntry& c : manifest.cases) {
    if (selected(c)) todo.push_back(&c);
  }
  std::vector<CaseWork> results(todo.size());
  parallel_for(todo.size(), run.config().jobs, [&](std::size_t i) {
    try {
      results[i] = body(*todo[i]);
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(e, stage, todo[i]->case_id);
    } catch (const std::exception& e) {
      throw StageError(Error(ErrorKind::kInternal, e.what()), stage, todo[i]->case_id);
    }
  });
  StageRecord rec;
  rec.stage = stage;
  for (std::size_t i = 0; i < todo.size(); ++i) {
    rec.artifacts.insert(rec.artifacts.end(), results[i].artifacts.begin(), results[i].artifacts.end());
    for (const std::string& w : results[i].warnings) rec.warnings.push_back(todo[i]->case_id + ": " + w);
    rec.cached += results[i].cached ? 1 : 0;
  }
  rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return rec;
}

bool all_exist(const std::vector<fs::path>& paths) {
  return std::all_of(paths.begin(), paths.end(), [](const fs::path& p) { return fs::exists(p); });
}

CaseWork cached_work(const RunDirectory& run, const std::vector<fs::path>& paths) {
  CaseWork w;
  w.cached = true;
  for (const fs::path& p : paths) w.artifacts.push_back(rel(run, p));
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

StageRecord run_label(const DatasetManifest& manifest, const RunDirectory& run) {
  const PipelineConfig& cfg = run.config();
  return for_cases(
      "label", manifest, run, [](const CaseEntry& c) { return c.crown_bottom_path.has_value(); },
      [&](const CaseEntry& c) {
        const fs::path labels_path = run.artifact(Stage::kLabel, c.case_id + ".labels.txt");
        const fs::path margin_path = run.artifact(Stage::kLabel, c.case_id + ".truth_margin.json");
        if (all_exist({labels_path, margin_path})) return cached_work(run, {labels_path, margin_path});
        CaseWork w;
        const TriangleMesh die = load_die(c);
        const TriangleMesh crown = load_mesh(*c.crown_bottom_path).mesh;
        // Labels are assigned in the registered frame, where the crown side is +z.
        const Registration reg = obb_register(die, c.arch);
        SplitOptions opts;
        opts.max_dilation = cfg.max_dilation;
        opts.min_region_fraction = cfg.min_region_fraction;
        const RegionSplit split = label_die(reg.mesh, reg.transform.apply(crown), opts);
        w.warnings = split.warnings;

        MarginLine truth;
        truth.case_id = c.case_id;
        truth.points = resample_loop(extract_margin_points(crown).points, cfg.samples);
        write_file(labels_path, labels_text(split.labeled.labels));
        write_file(margin_path, margin_to_json(truth));
        w.artifacts = {rel(run, labels_path), rel(run, margin_path)};
        return w;
      });
}

StageRecord run_preprocess(const DatasetManifest& manifest, const RunDirectory& run) {
  const PipelineConfig& cfg = run.config();
  return for_cases(
      "preprocess", manifest, run, [](const CaseEntry&) { return true; },
      [&](const CaseEntry& c) {
        const fs::path mesh_path = run.artifact(Stage::kPreprocess, c.case_id + ".ply");
        const fs::path transform_path = run.artifact(Stage::kPreprocess, c.case_id + ".transform.json");
        const fs::path feat_path = run.artifact(Stage::kPreprocess, c.case_id + ".feat");
        if (all_exist({mesh_path, transform_path, feat_path})) {
          return cached_work(run, {mesh_path, transform_path, feat_path});
        }
        CaseWork w;
        const TriangleMesh die = load_die(c);
        const Registration reg = obb_register(die, c.arch);
        DecimationResult dec = decimate(reg.mesh, static_cast<std::size_t>(cfg.target_faces));
        w.warnings = dec.warnings;
        std::vector<int> labels;
        if (c.crown_bottom_path) {
          const fs::path label_path = run.artifact(Stage::kLabel, c.case_id + ".labels.txt");
          require_artifact(label_path, "label");
          const LabeledMesh full{reg.mesh, read_labels(label_path)};
          labels = transfer_labels(full, dec.mesh);
        }
        StoredTransform t;
        t.registration = reg.transform;
        const std::string feats = feature_bytes(dec.mesh, cfg, &t.normalization, &w.warnings);
        save_mesh(mesh_path, dec.mesh, MeshFormat::kPly, labels);
        write_file(transform_path, transform_text(t, die.num_faces(), dec.mesh.num_faces()));
        write_file(feat_path, feats);
        w.artifacts = {rel(run, mesh_path), rel(run, transform_path), rel(run, feat_path)};
        return w;
      });
}

namespace {

std::uint64_t case_key(const std::string& case_id) { return std::stoull(content_hash(case_id), nullptr, 16); }

AugmentationSpec augmentation_spec(const PipelineConfig& c) {
  AugmentationSpec spec;
  spec.rotation_x_deg = {-c.rotation_x_deg, c.rotation_x_deg};
  spec.rotation_y_deg = {-c.rotation_y_deg, c.rotation_y_deg};
  spec.rotation_z_deg = {-c.rotation_z_deg, c.rotation_z_deg};
  spec.scale = {c.scale_min, c.scale_max};
  spec.samples_per_die = c.augmentations;
  spec.seed = c.seed;
  return spec;
}

}  // namespace

StageRecord run_augment(const DatasetManifest& manifest, const RunDirectory& run) {
  const PipelineConfig& cfg = run.config();
  return for_cases(
      "augment", manifest, run, [](const CaseEntry& c) { return c.split == "train"; },
      [&](const CaseEntry& c) {
        std::vector<fs::path> outputs;
        for (int k = 0; k <= cfg.augmentations; ++k) {
          outputs.push_back(run.artifact(Stage::kAugment, c.case_id + "." + std::to_string(k) + ".feat"));
          outputs.push_back(run.artifact(Stage::kAugment, c.case_id + "." + std::to_string(k) + ".labels.txt"));
        }
        if (all_exist(outputs)) return cached_work(run, outputs);
        const fs::path mesh_path = run.artifact(Stage::kPreprocess, c.case_id + ".ply");
        require_artifact(mesh_path, "preprocess");
        const LoadedMesh loaded = load_artifact_mesh(mesh_path);
        if (!loaded.labels) throw Error(ErrorKind::kValidation, "preprocessed mesh carries no labels");
        const LabeledMesh sample{loaded.mesh, *loaded.labels};
        const std::vector<LabeledMesh> copies = augment(sample, augmentation_spec(cfg), case_key(c.case_id));
        CaseWork w;
        for (std::size_t k = 0; k < copies.size(); ++k) {
          write_file(outputs[2 * k], feature_bytes(copies[k].mesh, cfg, nullptr, &w.warnings));
          write_file(outputs[2 * k + 1], labels_text(copies[k].labels));
        }
        for (const fs::path& p : outputs) w.artifacts.push_back(rel(run, p));
        return w;
      });
}

StageRecord run_train(const DatasetManifest& manifest, const RunDirectory& run,
                      const std::function<void(const std::string&)>& log) {
  const PipelineConfig& cfg = run.config();
  const auto start = Clock::now();
  StageRecord rec;
  rec.stage = "train";
  std::vector<fs::path> outputs;
  for (int k = 1; k <= cfg.folds; ++k) outputs.push_back(run.artifact(Stage::kTrain, "fold" + std::to_string(k) + ".ckpt"));
  const fs::path history_path = run.artifact(Stage::kTrain, "history.csv");
  const fs::path folds_path = run.artifact(Stage::kTrain, "folds.json");
  const fs::path arch_path = run.artifact(Stage::kTrain, "architecture.json");
  outputs.insert(outputs.end(), {history_path, folds_path, arch_path});
  for (const fs::path& p : outputs) rec.artifacts.push_back(rel(run, p));
  const std::vector<std::string> train_ids = manifest.ids("train");
  if (train_ids.empty()) throw Error(ErrorKind::kValidation, "manifest has no training cases");
  if (all_exist(outputs)) {
    const json stored = json::parse(read_file(folds_path));
    std::set<std::string> trained;
    for (const auto& [id, _] : stored.at("fold_of").items()) trained.insert(id);
    if (trained != std::set<std::string>(train_ids.begin(), train_ids.end())) {
      throw Error(ErrorKind::kValidation, "the models in " + run.stage_dir(Stage::kTrain).string() +
                                              " were trained on a different set of cases; use a new run directory");
    }
    rec.cached = 1;
    return rec;
  }
  std::vector<TrainSample> dataset;
  for (const std::string& id : train_ids) {
    for (int k = 0; k <= cfg.augmentations; ++k) {
      const fs::path feat = run.artifact(Stage::kAugment, id + "." + std::to_string(k) + ".feat");
      const fs::path labels = run.artifact(Stage::kAugment, id + "." + std::to_string(k) + ".labels.txt");
      require_artifact(feat, "augment");
      auto [features, adjacency] = deserialize_features(read_file(feat));
      TrainSample s;
      s.case_id = id;
      s.augmented = k > 0;
      s.features = std::move(features.values);
      s.adjacency = std::move(adjacency);
      s.labels = read_labels(labels);
      dataset.push_back(std::move(s));
    }
  }
  const FoldAssignment folds = kfold_split(train_ids, cfg.folds, cfg.seed);
  TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.epochs;
  tc.patch_size = cfg.patch_size;
  tc.seed = cfg.seed;
  NetworkConfig net;
  net.in_channels = feature_channels(feature_options(cfg));
  net.width_scale = cfg.width_scale;

  // Folds are independent, so training them concurrently stays deterministic.
  std::vector<FoldResult> results(static_cast<std::size_t>(cfg.folds));
  std::mutex log_mutex;
  parallel_for(results.size(), cfg.jobs, [&](std::size_t i) {
    const int k = static_cast<int>(i) + 1;
    std::vector<const TrainSample*> training;
    std::vector<const TrainSample*> validation;
    for (const TrainSample& s : dataset) {
      if (folds.fold_of.at(s.case_id) != k) {
        training.push_back(&s);
      } else if (!s.augmented) {
        validation.push_back(&s);
      }
    }
    ProgressFn progress;
    if (log) {
      progress = [&](const HistoryRow& r) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "fold %d epoch %d/%d train_loss %.5f val_loss %.5f", r.fold, r.epoch,
                      cfg.epochs, r.train_loss, r.val_loss);
        const std::lock_guard<std::mutex> lock(log_mutex);
        log(buf);
      };
    }
    try {
      results[i] = train_fold(training, validation, tc, net, k, progress);
    } catch (const Error& e) {
      throw StageError(e, "train", "fold" + std::to_string(k));
    }
  });

  std::vector<HistoryRow> history;
  json fold_json{{"k", cfg.folds}, {"seed", cfg.seed}};
  json assignment = json::object();
  for (const auto& [id, f] : folds.fold_of) assignment[id] = f;
  fold_json["fold_of"] = assignment;
  json best = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    write_file(outputs[i], serialize_params(results[i].best));
    history.insert(history.end(), results[i].history.begin(), results[i].history.end());
    best.push_back({{"fold", i + 1}, {"best_epoch", results[i].best_epoch}, {"best_val_loss", results[i].best_val_loss}});
  }
  fold_json["best"] = best;
  write_file(history_path, history_csv(history));
  write_file(folds_path, fold_json.dump(2) + "\n");
  write_file(arch_path, architecture_json(results.front().best) + "\n");
  rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return rec;
}

StageRecord run_predict(const DatasetManifest& manifest, const RunDirectory& run) {
  const PipelineConfig& cfg = run.config();
  const fs::path folds_path = run.artifact(Stage::kTrain, "folds.json");
  std::vector<NetworkParams> models;
  std::map<std::string, int> fold_of;
  bool loaded = false;
  std::mutex load_mutex;
  auto ensure_models = [&] {
    const std::lock_guard<std::mutex> lock(load_mutex);
    if (loaded) return;
    require_artifact(folds_path, "train");
    for (int k = 1; k <= cfg.folds; ++k) {
      models.push_back(deserialize_params(read_file(run.artifact(Stage::kTrain, "fold" + std::to_string(k) + ".ckpt"))));
    }
    const json j = json::parse(read_file(folds_path));
    for (const auto& [id, f] : j.at("fold_of").items()) fold_of[id] = f.get<int>();
    loaded = true;
  };
  return for_cases(
      "predict", manifest, run, [](const CaseEntry&) { return true; },
      [&](const CaseEntry& c) {
        const fs::path probs_path = run.artifact(Stage::kPredict, c.case_id + ".probs.csv");
        const fs::path labels_path = run.artifact(Stage::kPredict, c.case_id + ".labels.txt");
        if (all_exist({probs_path, labels_path})) return cached_work(run, {probs_path, labels_path});
        ensure_models();
        const fs::path feat_path = run.artifact(Stage::kPreprocess, c.case_id + ".feat");
        require_artifact(feat_path, "preprocess");
        const auto [features, adjacency] = deserialize_features(read_file(feat_path));
        CaseWork w;
        EnsembleResult result;
        if (cfg.ensemble.rfind("fold-", 0) == 0) {
          const auto k = static_cast<std::size_t>(std::stoi(cfg.ensemble.substr(5)));
          const ProbabilityField p = forward(models[k - 1], features.values, adjacency);
          result = {argmax_labels(p), p};
        } else if (cfg.train_cases == "out-of-fold" && fold_of.contains(c.case_id)) {
          // Training cases are scored by the one model that never saw them.
          const auto k = static_cast<std::size_t>(fold_of.at(c.case_id));
          const ProbabilityField p = forward(models[k - 1], features.values, adjacency);
          result = {argmax_labels(p), p};
        } else {
          std::vector<ProbabilityField> fields;
          for (const NetworkParams& m : models) fields.push_back(forward(m, features.values, adjacency));
          result = combine(fields, parse_ensemble_strategy(cfg.ensemble));
        }
        write_file(probs_path, probs_text(result.combined));
        write_file(labels_path, labels_text(result.labels));
        w.artifacts = {rel(run, probs_path), rel(run, labels_path)};
        return w;
      });
}

StageRecord run_refine(const DatasetManifest& manifest, const RunDirectory& run) {
  const PipelineConfig& cfg = run.config();
  return for_cases(
      "refine", manifest, run, [](const CaseEntry&) { return true; },
      [&](const CaseEntry& c) {
        const fs::path labels_path = run.artifact(Stage::kRefine, c.case_id + ".labels.txt");
        const fs::path mesh_path = run.artifact(Stage::kRefine, c.case_id + ".ply");
        if (all_exist({labels_path, mesh_path})) return cached_work(run, {labels_path, mesh_path});
        const fs::path probs_path = run.artifact(Stage::kPredict, c.case_id + ".probs.csv");
        require_artifact(probs_path, "predict");
        const TriangleMesh mesh = load_artifact_mesh(run.artifact(Stage::kPreprocess, c.case_id + ".ply")).mesh;
        const ProbabilityField probs = read_probs(probs_path);
        const std::vector<int> cut = graph_cut_refine(mesh, probs, GraphCutConfig{cfg.lambda, cfg.sigma, cfg.epsilon});
        const std::vector<int> clean = cleanup_components(cut, FaceAdjacency(mesh));
        CaseWork w;
        const std::vector<int> argmax = argmax_labels(probs);
        std::size_t flipped = 0;
        for (std::size_t f = 0; f < clean.size(); ++f) flipped += clean[f] != argmax[f];
        if (flipped * 20 > clean.size()) {
          w.warnings.push_back("refinement changed " + std::to_string(flipped) + " of " + std::to_string(clean.size()) +
                               " face labels");
        }
        write_file(labels_path, labels_text(clean));
        save_mesh(mesh_path, mesh, MeshFormat::kPly, clean);
        w.artifacts = {rel(run, labels_path), rel(run, mesh_path)};
        return w;
      });
}

StageRecord run_extract(const DatasetManifest& manifest, const RunDirectory& run) {
  const PipelineConfig& cfg = run.config();
  return for_cases(
      "extract", manifest, run, [](const CaseEntry&) { return true; },
      [&](const CaseEntry& c) {
        const fs::path json_path = run.artifact(Stage::kExtract, c.case_id + ".margin.json");
        const fs::path obj_path = run.artifact(Stage::kExtract, c.case_id + ".margin.obj");
        if (all_exist({json_path, obj_path})) return cached_work(run, {json_path, obj_path});
        const fs::path labels_path = run.artifact(Stage::kRefine, c.case_id + ".labels.txt");
        require_artifact(labels_path, "refine");
        const StoredTransform t = read_transform(run.artifact(Stage::kPreprocess, c.case_id + ".transform.json"));
        const LabeledMesh labeled{load_artifact_mesh(run.artifact(Stage::kPreprocess, c.case_id + ".ply")).mesh,
                                  read_labels(labels_path)};
        const TriangleMesh original = load_die(c);
        MarginLine line = extract_margin_line(labeled, t.registration.apply(original), cfg.samples);
        // Report the margin in the scan's own frame.
        const RigidTransform back = t.registration.inverse();
        const SurfaceIndex raw_surface(original);
        for (Vec3& p : line.points) p = raw_surface.closest_point(back.apply(p)).point;
        line.case_id = c.case_id;
        CaseWork w;
        w.warnings = line.warnings;
        write_file(json_path, margin_to_json(line));
        write_file(obj_path, margin_to_obj(line));
        w.artifacts = {rel(run, json_path), rel(run, obj_path)};
        return w;
      });
}

StageRecord run_evaluate(const DatasetManifest& manifest, const RunDirectory& run, EvaluationReport* report_out) {
  const PipelineConfig& cfg = run.config();
  const auto start = Clock::now();
  std::vector<std::string> missing;
  std::vector<const CaseEntry*> cases;
  for (const CaseEntry& c : manifest.cases) {
    if (!c.crown_bottom_path) continue;
    cases.push_back(&c);
    if (!fs::exists(run.artifact(Stage::kExtract, c.case_id + ".margin.json")) ||
        !fs::exists(run.artifact(Stage::kLabel, c.case_id + ".truth_margin.json"))) {
      missing.push_back(c.case_id);
    }
  }
  if (!missing.empty()) {
    std::string ids;
    for (const std::string& id : missing) ids += (ids.empty() ? "" : ", ") + id;
    throw Error(ErrorKind::kValidation, "prediction and truth case ids differ; no prediction or truth for: " + ids);
  }
  EvaluationReport report;
  report.threshold_um = cfg.threshold_um;
  report.rows.resize(cases.size());
  parallel_for(cases.size(), cfg.jobs, [&](std::size_t i) {
    const CaseEntry& c = *cases[i];
    try {
      const MarginLine pred = margin_from_json(read_file(run.artifact(Stage::kExtract, c.case_id + ".margin.json")));
      const MarginLine truth = margin_from_json(read_file(run.artifact(Stage::kLabel, c.case_id + ".truth_margin.json")));
      if (pred.case_id != truth.case_id) {
        throw Error(ErrorKind::kValidation, "case id mismatch: prediction '" + pred.case_id + "' vs truth '" +
                                                truth.case_id + "'");
      }
      const LoadedMesh truth_mesh = load_artifact_mesh(run.artifact(Stage::kPreprocess, c.case_id + ".ply"));
      const std::vector<int> predicted = read_labels(run.artifact(Stage::kRefine, c.case_id + ".labels.txt"));
      if (!truth_mesh.labels) throw Error(ErrorKind::kValidation, "no truth labels for case " + c.case_id);
      EvaluationRow row = evaluate_case(c.case_id, predicted, *truth_mesh.labels, pred.points, truth.points,
                                        cfg.threshold_um);
      row.rating = c.rating;
      report.rows[i] = std::move(row);
    } catch (const Error& e) {
      throw StageError(e, "evaluate", c.case_id);
    }
  });
  const fs::path csv = run.artifact(Stage::kEvaluate, "evaluation.csv");
  const fs::path js = run.artifact(Stage::kEvaluate, "evaluation.json");
  write_file(csv, report.to_csv());
  write_file(js, report.to_json());
  StageRecord rec;
  rec.stage = "evaluate";
  rec.artifacts = {rel(run, csv), rel(run, js)};
  rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (report_out != nullptr) *report_out = std::move(report);
  return rec;
}

// ---------------------------------------------------------------------------
// Report

namespace {

json load_report(const RunDirectory& run) {
  if (fs::exists(run.report_path())) {
    try {
      const json j = json::parse(read_file(run.report_path()));
      if (j.contains("stages") && j.value("config_hash", "") == content_hash(run.config().to_json().dump())) return j;
    } catch (const json::exception&) {
      // rewrite below
    }
  }
  return json{{"config", run.config().to_json()},
              {"config_hash", content_hash(run.config().to_json().dump())},
              {"seed", run.config().seed},
              {"stages", json::array()}};
}

void write_report(const RunDirectory& run, const json& j) {
  for (const json& s : j.at("stages")) {
    for (const json& a : s.at("artifacts")) {
      if (!fs::exists(run.root() / a.get<std::string>())) {
        throw Error(ErrorKind::kInternal, "report references missing artifact " + a.get<std::string>());
      }
    }
  }
  write_file(run.report_path(), j.dump(2) + "\n");
}

}  // namespace

void append_report(const RunDirectory& run, const StageRecord& record) {
  json j = load_report(run);
  j["stages"].push_back({{"stage", record.stage},
                         {"hash", record.stage.empty() ? "" : run.stage_hash([&] {
                           for (Stage s : {Stage::kLabel, Stage::kPreprocess, Stage::kAugment, Stage::kTrain,
                                           Stage::kPredict, Stage::kRefine, Stage::kExtract, Stage::kEvaluate}) {
                             if (to_string(s) == record.stage) return s;
                           }
                           return Stage::kEvaluate;
                         }())},
                         {"seconds", record.seconds},
                         {"cached_cases", record.cached},
                         {"artifacts", record.artifacts},
                         {"warnings", record.warnings}});
  write_report(run, j);
}

void finalize_report(const RunDirectory& run, const EvaluationReport* evaluation) {
  json j = load_report(run);
  if (evaluation != nullptr) {
    j["evaluation"] = json::parse(evaluation->to_json());
  }
  // Every stage reduces in manifest order and training folds are independent,
  // so artifacts do not depend on --jobs.
  j["deterministic"] = true;
  write_report(run, j);
}

EvaluationReport run_pipeline(const DatasetManifest& manifest, const RunDirectory& run,
                              const std::function<void(const std::string&)>& log) {
  auto step = [&](const StageRecord& r) {
    append_report(run, r);
    if (log) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "%s: %zu artifact(s), %d cached, %.1f s", r.stage.c_str(), r.artifacts.size(),
                    r.cached, r.seconds);
      log(buf);
      for (const std::string& w : r.warnings) log("  warning: " + w);
    }
  };
  step(run_label(manifest, run));
  step(run_preprocess(manifest, run));
  step(run_augment(manifest, run));
  step(run_train(manifest, run, log));
  step(run_predict(manifest, run));
  step(run_refine(manifest, run));
  step(run_extract(manifest, run));
  EvaluationReport report;
  const bool any_truth = std::any_of(manifest.cases.begin(), manifest.cases.end(),
                                     [](const CaseEntry& c) { return c.crown_bottom_path.has_value(); });
  if (any_truth) step(run_evaluate(manifest, run, &report));
  finalize_report(run, any_truth ? &report : nullptr);
  return report;
}

// ---------------------------------------------------------------------------
// Synthetic dataset

fs::path write_synthetic_dataset(const fs::path& dir, int count, std::uint64_t seed, int test_count, int segments) {
  fs::create_directories(dir);
  json cases = json::array();
  const int teeth[4] = {11, 21, 31, 41};
  for (int i = 0; i < count + test_count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "synth%03d-%d", i, teeth[i % 4]);
    synth::DieParameters p = synth::random_die_parameters(seed * 1000 + static_cast<std::uint64_t>(i));
    p.segments = segments;
    const synth::SyntheticDie die = synth::frustum_die(p);

    std::mt19937_64 rng(seed * 7919 + static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vec3 axis(unit(rng), unit(rng), unit(rng));
    if (axis.norm() < 1e-3) axis = Vec3::UnitZ();
    Eigen::Matrix3d r = Eigen::AngleAxisd(3.0 * unit(rng), axis.normalized()).toRotationMatrix();
    const int tooth = teeth[i % 4];
    // Upper-arch scans arrive upside down relative to lower ones.
    if (tooth == 11 || tooth == 21) r = r * Eigen::Vector3d(1, -1, -1).asDiagonal();
    const Vec3 t(10.0 * unit(rng), 10.0 * unit(rng), 10.0 * unit(rng));

    const std::string sid = id;
    save_mesh(dir / (sid + "_die.stl"), die.die.transformed(r, t), MeshFormat::kStlBinary);
    save_mesh(dir / (sid + "_crownbottom.stl"), die.crown_bottom.transformed(r, t), MeshFormat::kStlBinary);
    MarginLine crease;
    crease.case_id = sid;
    for (const Vec3& q : die.crease_samples(20000)) crease.points.push_back(r * q + t);
    write_file(dir / (sid + "_crease.json"), margin_to_json(crease));
    cases.push_back({{"case_id", sid},
                     {"die", sid + "_die.stl"},
                     {"crown_bottom", sid + "_crownbottom.stl"},
                     {"tooth", tooth},
                     {"split", i < count ? "train" : "test"}});
  }
  const fs::path manifest = dir / "manifest.json";
  write_file(manifest, json{{"cases", cases}}.dump(2) + "\n");
  return manifest;
}

}  // namespace prepline
