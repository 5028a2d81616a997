// vesselforge command-line frontend: phantom corpora, supervised training,
// pseudo-label scoring/selection, the full self-training pipeline, metric and
// morphometry reports, and group statistics. Every subcommand writes an
// effective_config.json (all defaults resolved) and a manifest.json (config
// hash + input/output content hashes, no timestamps) so identical invocations
// are byte-identical and auditable.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vesselforge/augment.hpp"
#include "vesselforge/common.hpp"
#include "vesselforge/csv.hpp"
#include "vesselforge/features.hpp"
#include "vesselforge/metrics.hpp"
#include "vesselforge/model.hpp"
#include "vesselforge/morphometry.hpp"
#include "vesselforge/phantom.hpp"
#include "vesselforge/selftrain.hpp"
#include "vesselforge/stats.hpp"
#include "vesselforge/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vesselforge;

namespace {

// --------------------------------------------------------------- config view
//
// Field-precise JSON config access: every getter checks the type, every key
// must be consumed, and unknown keys are rejected by finish().

class ConfigView {
 public:
  ConfigView(const json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
    if (!j_.is_object()) throw std::invalid_argument("config: " + ctx_ + " must be a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  double number(const char* key, double def) { return has(key) ? require_number(key) : def; }

  double require_number(const char* key) {
    mark(key);
    const json& v = at(key);
    if (!v.is_number()) fail(key, "a number");
    return v.get<double>();
  }

  int64_t integer(const char* key, int64_t def) { return has(key) ? require_integer(key) : def; }

  int64_t require_integer(const char* key) {
    mark(key);
    const json& v = at(key);
    if (!v.is_number_integer()) fail(key, "an integer");
    return v.get<int64_t>();
  }

  bool boolean(const char* key, bool def) {
    if (!has(key)) return def;
    mark(key);
    const json& v = at(key);
    if (!v.is_boolean()) fail(key, "a boolean");
    return v.get<bool>();
  }

  std::string str(const char* key, const std::string& def) { return has(key) ? require_str(key) : def; }

  std::string require_str(const char* key) {
    mark(key);
    const json& v = at(key);
    if (!v.is_string()) fail(key, "a string");
    return v.get<std::string>();
  }

  // Returns nullptr when absent.
  const json* object(const char* key) {
    if (!has(key)) return nullptr;
    mark(key);
    const json& v = at(key);
    if (!v.is_object()) fail(key, "an object");
    return &v;
  }

  const json* array(const char* key) {
    if (!has(key)) return nullptr;
    mark(key);
    const json& v = at(key);
    if (!v.is_array()) fail(key, "an array");
    return &v;
  }

  std::vector<double> number_triple(const char* key) {
    const json* a = array(key);
    if (!a) fail(key, "an array of 3 numbers (missing)");
    if (a->size() != 3) fail(key, "an array of 3 numbers");
    std::vector<double> out;
    for (const auto& v : *a) {
      if (!v.is_number()) fail(key, "an array of 3 numbers");
      out.push_back(v.get<double>());
    }
    return out;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key()))
        throw std::invalid_argument("config: unknown key '" + prefixed(item.key()) + "'");
    }
  }

  std::string prefixed(const std::string& key) const { return ctx_.empty() ? key : ctx_ + "." + key; }

 private:
  const json& at(const char* key) const { return j_.at(key); }
  void mark(const char* key) { used_.insert(key); }
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw std::invalid_argument("config: " + prefixed(key) + " must be " + std::string(what));
  }

  const json& j_;
  std::string ctx_;
  std::set<std::string> used_;
};

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + path + ": " + e.what());
  }
  return j;
}

// ------------------------------------------------------------ shared parsers

Dims parse_dims(ConfigView& cv) {
  const std::vector<double> v = cv.number_triple("dims");
  for (const double d : v)
    if (d < 1 || d != std::floor(d)) throw std::invalid_argument("config: " + cv.prefixed("dims") + " must be positive integers");
  return Dims{static_cast<int64_t>(v[0]), static_cast<int64_t>(v[1]), static_cast<int64_t>(v[2])};
}

Spacing parse_spacing(ConfigView& cv) {
  const std::vector<double> v = cv.number_triple("spacing_mm");
  Spacing sp{v[0], v[1], v[2]};
  sp.validate();
  return sp;
}

TrainConfig parse_train_config(const json* j) {
  TrainConfig cfg;
  if (j) {
    ConfigView cv(*j, "train");
    cfg.learning_rate = cv.number("learning_rate", cfg.learning_rate);
    cfg.momentum = cv.number("momentum", cfg.momentum);
    cfg.weight_decay = cv.number("weight_decay", cfg.weight_decay);
    cfg.epochs = static_cast<int>(cv.integer("epochs", cfg.epochs));
    cfg.batch_size = static_cast<size_t>(cv.integer("batch_size", static_cast<int64_t>(cfg.batch_size)));
    cfg.hra_threshold = cv.number("hra_threshold", cfg.hra_threshold);
    cfg.checkpoint_every = static_cast<int>(cv.integer("checkpoint_every", cfg.checkpoint_every));
    cv.finish();
  }
  cfg.validate();
  return cfg;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"momentum", c.momentum},           {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},               {"batch_size", c.batch_size},       {"hra_threshold", c.hra_threshold},
          {"checkpoint_every", c.checkpoint_every}};
}

FeatureConfig parse_feature_config(const json* j) {
  FeatureConfig cfg;
  if (j) {
    ConfigView cv(*j, "features");
    cfg.levels = static_cast<int>(cv.integer("levels", cfg.levels));
    cfg.sigma_vox = cv.number("sigma_vox", cfg.sigma_vox);
    cfg.include_gradient = cv.boolean("include_gradient", cfg.include_gradient);
    cfg.kmeans_k = static_cast<size_t>(cv.integer("kmeans_k", static_cast<int64_t>(cfg.kmeans_k)));
    cfg.kmeans_max_iters = static_cast<int>(cv.integer("kmeans_max_iters", cfg.kmeans_max_iters));
    cfg.kmeans_samples = static_cast<size_t>(cv.integer("kmeans_samples", static_cast<int64_t>(cfg.kmeans_samples)));
    cv.finish();
  }
  return cfg;
}

json feature_config_to_json(const FeatureConfig& c) {
  return {{"levels", c.levels},         {"sigma_vox", c.sigma_vox},
          {"include_gradient", c.include_gradient}, {"kmeans_k", c.kmeans_k},
          {"kmeans_max_iters", c.kmeans_max_iters}, {"kmeans_samples", c.kmeans_samples}};
}

AugmentationSpec parse_augment(const json* j) {
  AugmentationSpec s;
  if (j) {
    ConfigView cv(*j, "augment");
    s.rotation_deg = cv.number("rotation_deg", s.rotation_deg);
    s.scale_min = cv.number("scale_min", s.scale_min);
    s.scale_max = cv.number("scale_max", s.scale_max);
    s.mirror_x = cv.boolean("mirror_x", s.mirror_x);
    s.mirror_y = cv.boolean("mirror_y", s.mirror_y);
    s.mirror_z = cv.boolean("mirror_z", s.mirror_z);
    s.elastic_spacing_vox = static_cast<int>(cv.integer("elastic_spacing_vox", s.elastic_spacing_vox));
    s.elastic_sigma_vox = cv.number("elastic_sigma_vox", s.elastic_sigma_vox);
    s.gamma_min = cv.number("gamma_min", s.gamma_min);
    s.gamma_max = cv.number("gamma_max", s.gamma_max);
    cv.finish();
  }
  s.validate();
  return s;
}

json augment_to_json_cfg(const AugmentationSpec& s) {
  json j = augmentation_to_json(s);
  j.erase("seed");  // stage seeds are derived from the global seed
  return j;
}

SelectionPolicy parse_policy(const json* j) {
  SelectionPolicy policy;
  if (j) {
    ConfigView cv(*j, "policy");
    const json* arr = cv.array("iterations");
    if (arr) {
      policy.iterations.clear();
      size_t k = 0;
      for (const auto& item : *arr) {
        ConfigView rv(item, "policy.iterations[" + std::to_string(k++) + "]");
        SelectionRule rule;
        rule.min_mean_precision = rv.number("min_mean_precision", rule.min_mean_precision);
        rule.min_mean_dice = rv.number("min_mean_dice", rule.min_mean_dice);
        rule.cap = static_cast<size_t>(rv.integer("cap", static_cast<int64_t>(rule.cap)));
        rv.finish();
        rule.validate();
        policy.iterations.push_back(rule);
      }
    }
    cv.finish();
  }
  return policy;
}

json policy_to_json(const SelectionPolicy& p) {
  json arr = json::array();
  for (const auto& r : p.iterations)
    arr.push_back({{"min_mean_precision", r.min_mean_precision}, {"min_mean_dice", r.min_mean_dice}, {"cap", r.cap}});
  return {{"iterations", arr}};
}

// ------------------------------------------------------------- run bookkeeping

std::string hash_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open input file '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return hex64(fnv1a64(bytes));
}

struct RunWriter {
  fs::path out;
  json inputs = json::object();
  json outputs = json::object();

  explicit RunWriter(const std::string& out_dir) : out(out_dir) {
    if (out_dir.empty()) throw std::invalid_argument("--out directory is required");
    fs::create_directories(out);
  }

  // Validates existence, records the content hash, returns the path unchanged.
  std::string record_input(const std::string& path) {
    if (!fs::exists(path)) throw std::invalid_argument("input not found: '" + path + "'");
    inputs[path] = hash_file(path);
    return path;
  }

  void write_text(const std::string& rel, const std::string& content) {
    const fs::path p = out / rel;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
    f << content;
    f.close();
    outputs[rel] = hex64(fnv1a64(content));
  }

  void write_json(const std::string& rel, const json& j) { write_text(rel, j.dump(2) + "\n"); }

  void write_csv(const std::string& rel, const std::vector<std::string>& rows) {
    std::string body;
    for (const auto& r : rows) body += r + "\n";
    write_text(rel, body);
  }

  template <typename Vol>
  void write_volume(const std::string& relbase, const Vol& v) {
    save_volume(v, (out / relbase).string());
    outputs[relbase + ".vvol.json"] = hash_file(out / (relbase + ".vvol.json"));
    outputs[relbase + ".vvol.raw"] = hash_file(out / (relbase + ".vvol.raw"));
  }

  void finalize(const std::string& command, uint64_t seed, const json& effective_config) {
    write_json("effective_config.json", effective_config);
    const json manifest = {{"command", command},
                           {"seed", seed},
                           {"config_hash", hex64(fnv1a64(effective_config.dump()))},
                           {"inputs", inputs},
                           {"outputs", outputs}};
    std::ofstream f(out / "manifest.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write manifest.json");
    f << manifest.dump(2) << "\n";
  }
};

// ------------------------------------------------------------ split manifests

struct SplitEntry {
  std::string id;
  std::string grid;  // resolved path
  std::string mask;  // resolved path, may be empty
};

std::vector<SplitEntry> load_split(const std::string& path, RunWriter& run) {
  run.record_input(path);
  const json j = load_json_file(path);
  ConfigView cv(j, fs::path(path).filename().string());
  const json* scans = cv.array("scans");
  if (!scans) throw std::invalid_argument("split manifest '" + path + "' missing \"scans\" array");
  cv.finish();
  const fs::path dir = fs::path(path).parent_path();
  std::vector<SplitEntry> out;
  std::set<std::string> seen;
  size_t k = 0;
  for (const auto& item : *scans) {
    ConfigView sv(item, "scans[" + std::to_string(k++) + "]");
    SplitEntry e;
    e.id = sv.require_str("id");
    e.grid = (dir / sv.require_str("grid")).string();
    if (sv.has("mask")) e.mask = (dir / sv.require_str("mask")).string();
    sv.finish();
    if (!seen.insert(e.id).second) throw std::invalid_argument("split manifest '" + path + "': duplicate id " + e.id);
    run.record_input(e.grid);
    if (!e.mask.empty()) run.record_input(e.mask);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Scan> load_scans(const std::vector<SplitEntry>& entries, bool need_mask) {
  std::vector<Scan> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    Scan s;
    s.id = e.id;
    s.grid = load_volume(e.grid);
    if (need_mask) {
      if (e.mask.empty()) throw std::invalid_argument("scan '" + e.id + "' requires a mask path");
      s.mask = load_mask(e.mask);
      detail::require_same_dims(s.grid.dims, s.mask.dims, ("scan " + e.id).c_str());
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ----------------------------------------------------------- model documents

json model_to_json(const VoxelClassifier& m, const FeaturePipeline& features) {
  return {{"format", "vesselforge-model"}, {"w", m.w}, {"b", m.b}, {"features", features.to_json()}};
}

struct LoadedModel {
  VoxelClassifier params;
  FeaturePipeline features;
};

LoadedModel load_model(const std::string& path, RunWriter& run) {
  run.record_input(path);
  const json j = load_json_file(path);
  if (j.value("format", "") != "vesselforge-model")
    throw std::invalid_argument("'" + path + "' is not a model file");
  LoadedModel m;
  m.params.w = j.at("w").get<std::vector<double>>();
  m.params.b = j.at("b").get<double>();
  m.features = FeaturePipeline::from_json(j.at("features"));
  return m;
}

json checkpoints_to_json(const TrainResult& tr) {
  json arr = json::array();
  for (const auto& ck : tr.checkpoints) arr.push_back(checkpoint_to_json(ck));
  return {{"checkpoints", arr}, {"best_index", tr.best_index}};
}

TrainResult checkpoints_from_json(const json& j) {
  TrainResult tr;
  for (const auto& item : j.at("checkpoints")) tr.checkpoints.push_back(checkpoint_from_json(item));
  if (tr.checkpoints.empty()) throw std::invalid_argument("checkpoints file contains no checkpoints");
  tr.best_index = j.at("best_index").get<size_t>();
  if (tr.best_index >= tr.checkpoints.size()) throw std::invalid_argument("checkpoints file: best_index out of range");
  return tr;
}

// --------------------------------------------------------------- subcommands

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed_override;
  int jobs = 1;
};

uint64_t effective_seed(ConfigView& cv, const CommonArgs& args) {
  const uint64_t cfg_seed = static_cast<uint64_t>(cv.integer("seed", 0));
  return args.seed_override ? *args.seed_override : cfg_seed;
}

// ---- phantom ---------------------------------------------------------------

TreeParams parse_tree_params(const json* j) {
  TreeParams t;
  if (j) {
    ConfigView cv(*j, "tree");
    t.depth = static_cast<int>(cv.integer("depth", t.depth));
    t.root_radius_mm = cv.number("root_radius_mm", t.root_radius_mm);
    t.radius_decay = cv.number("radius_decay", t.radius_decay);
    t.angle_min_deg = cv.number("angle_min_deg", t.angle_min_deg);
    t.angle_max_deg = cv.number("angle_max_deg", t.angle_max_deg);
    t.length_min_mm = cv.number("length_min_mm", t.length_min_mm);
    t.length_max_mm = cv.number("length_max_mm", t.length_max_mm);
    t.length_decay = cv.number("length_decay", t.length_decay);
    t.min_clearance_mm = cv.number("min_clearance_mm", t.min_clearance_mm);
    if (cv.has("root_start_frac")) {
      const std::vector<double> v = cv.number_triple("root_start_frac");
      t.root_start_frac = {v[0], v[1], v[2]};
    }
    if (cv.has("root_direction")) {
      const std::vector<double> v = cv.number_triple("root_direction");
      t.root_direction = {v[0], v[1], v[2]};
    }
    cv.finish();
  }
  t.validate();
  return t;
}

json tree_params_to_json(const TreeParams& t) {
  return {{"depth", t.depth},
          {"root_radius_mm", t.root_radius_mm},
          {"radius_decay", t.radius_decay},
          {"angle_min_deg", t.angle_min_deg},
          {"angle_max_deg", t.angle_max_deg},
          {"length_min_mm", t.length_min_mm},
          {"length_max_mm", t.length_max_mm},
          {"length_decay", t.length_decay},
          {"min_clearance_mm", t.min_clearance_mm},
          {"root_start_frac", t.root_start_frac},
          {"root_direction", t.root_direction}};
}

IntensityParams parse_intensity(const json* j, IntensityParams base, const std::string& ctx) {
  if (j) {
    ConfigView cv(*j, ctx);
    base.vessel = static_cast<float>(cv.number("vessel", base.vessel));
    base.background = static_cast<float>(cv.number("background", base.background));
    base.noise_sigma = cv.number("noise_sigma", base.noise_sigma);
    base.blob_count = static_cast<int>(cv.integer("blob_count", base.blob_count));
    base.blob_radius_min_mm = cv.number("blob_radius_min_mm", base.blob_radius_min_mm);
    base.blob_radius_max_mm = cv.number("blob_radius_max_mm", base.blob_radius_max_mm);
    base.blob_intensity = static_cast<float>(cv.number("blob_intensity", base.blob_intensity));
    cv.finish();
  }
  base.validate();
  return base;
}

json intensity_to_json(const IntensityParams& p) {
  return {{"vessel", p.vessel},
          {"background", p.background},
          {"noise_sigma", p.noise_sigma},
          {"blob_count", p.blob_count},
          {"blob_radius_min_mm", p.blob_radius_min_mm},
          {"blob_radius_max_mm", p.blob_radius_max_mm},
          {"blob_intensity", p.blob_intensity}};
}

struct CorpusJitter {
  double vessel = 0.0;
  double background = 0.0;
  double noise_sigma = 0.0;
  double root_radius_mm = 0.0;
};

CorpusJitter parse_jitter(const json* j) {
  CorpusJitter jit;
  if (j) {
    ConfigView cv(*j, "jitter");
    jit.vessel = cv.number("vessel", 0.0);
    jit.background = cv.number("background", 0.0);
    jit.noise_sigma = cv.number("noise_sigma", 0.0);
    jit.root_radius_mm = cv.number("root_radius_mm", 0.0);
    cv.finish();
  }
  return jit;
}

json jitter_to_json(const CorpusJitter& j) {
  return {{"vessel", j.vessel},
          {"background", j.background},
          {"noise_sigma", j.noise_sigma},
          {"root_radius_mm", j.root_radius_mm}};
}

int cmd_phantom(const CommonArgs& args) {
  RunWriter run(args.out_dir);
  run.record_input(args.config_path);
  const json spec_json = load_json_file(args.config_path);
  ConfigView cv(spec_json, "");
  const std::string kind = cv.require_str("kind");
  const Dims dims = parse_dims(cv);
  const Spacing spacing = parse_spacing(cv);
  const uint64_t seed = effective_seed(cv, args);

  if (kind == "tube") {
    TubeSpec ts;
    ts.dims = dims;
    ts.spacing = spacing;
    ts.radius_mm = cv.number("radius_mm", ts.radius_mm);
    const std::string axis = cv.str("axis", "z");
    if (axis == "z") ts.axis = 0;
    else if (axis == "y") ts.axis = 1;
    else if (axis == "x") ts.axis = 2;
    else throw std::invalid_argument("config: axis must be one of z, y, x");
    ts.length_mm = cv.number("length_mm", ts.length_mm);
    ts.vessel_intensity = static_cast<float>(cv.number("vessel_intensity", ts.vessel_intensity));
    ts.background_intensity = static_cast<float>(cv.number("background_intensity", ts.background_intensity));
    ts.noise_sigma = cv.number("noise_sigma", ts.noise_sigma);
    ts.seed = seed;
    const std::string id = cv.str("id", "tube0");
    cv.finish();

    const TubePhantom ph = generate_tube_phantom(ts);
    run.write_volume(id, ph.grid);
    run.write_volume(id + ".mask", ph.mask);
    run.write_json(id + ".truth.json", tube_truth_to_json(ph.truth));

    const json effective = {{"kind", "tube"},
                            {"dims", {dims.nz, dims.ny, dims.nx}},
                            {"spacing_mm", {spacing.dz, spacing.dy, spacing.dx}},
                            {"radius_mm", ts.radius_mm},
                            {"axis", axis},
                            {"length_mm", ts.length_mm},
                            {"vessel_intensity", ts.vessel_intensity},
                            {"background_intensity", ts.background_intensity},
                            {"noise_sigma", ts.noise_sigma},
                            {"id", id},
                            {"seed", seed}};
    run.finalize("phantom", seed, effective);
    return 0;
  }

  if (kind == "tree") {
    PhantomSpec ps;
    ps.dims = dims;
    ps.spacing = spacing;
    ps.tree = parse_tree_params(cv.object("tree"));
    ps.intensity = parse_intensity(cv.object("intensity"), IntensityParams{}, "intensity");
    ps.seed = seed;
    const std::string id = cv.str("id", "tree0");
    cv.finish();

    const TreePhantom ph = generate_tree_phantom(ps);
    if (!ph.truth.clearance_ok)
      log_info("phantom %s: clearance %.3f mm below minimum %.3f mm", id.c_str(), ph.truth.clearance_mm,
               ps.tree.min_clearance_mm);
    run.write_volume(id, ph.grid);
    run.write_volume(id + ".mask", ph.mask);
    run.write_json(id + ".truth.json", tree_truth_to_json(ph.truth));

    const json effective = {{"kind", "tree"},
                            {"dims", {dims.nz, dims.ny, dims.nx}},
                            {"spacing_mm", {spacing.dz, spacing.dy, spacing.dx}},
                            {"tree", tree_params_to_json(ps.tree)},
                            {"intensity", intensity_to_json(ps.intensity)},
                            {"id", id},
                            {"seed", seed}};
    run.finalize("phantom", seed, effective);
    return 0;
  }

  if (kind != "corpus") throw std::invalid_argument("config: kind must be one of tube, tree, corpus");

  const TreeParams base_tree = parse_tree_params(cv.object("tree"));
  const IntensityParams base_intensity = parse_intensity(cv.object("intensity"), IntensityParams{}, "intensity");
  const CorpusJitter jitter = parse_jitter(cv.object("jitter"));

  const json* splits_obj = cv.object("splits");
  if (!splits_obj) throw std::invalid_argument("config: corpus requires a splits object");
  ConfigView sv(*splits_obj, "splits");
  static constexpr std::array<const char*, 4> split_names{"labeled", "validation", "unlabeled", "test"};
  static constexpr std::array<const char*, 4> split_prefix{"lab", "val", "unl", "tst"};
  std::array<int64_t, 4> split_counts{};
  for (size_t s = 0; s < 4; ++s) {
    split_counts[s] = sv.integer(split_names[s], 0);
    if (split_counts[s] < 0) throw std::invalid_argument("config: splits counts must be >= 0");
  }
  sv.finish();

  std::array<IntensityParams, 4> split_intensity{base_intensity, base_intensity, base_intensity, base_intensity};
  json overrides_json = json::object();
  if (const json* ov = cv.object("overrides")) {
    ConfigView ovv(*ov, "overrides");
    for (size_t s = 0; s < 4; ++s) {
      if (const json* so = ovv.object(split_names[s])) {
        split_intensity[s] = parse_intensity(so, base_intensity, std::string("overrides.") + split_names[s]);
        overrides_json[split_names[s]] = intensity_to_json(split_intensity[s]);
      }
    }
    ovv.finish();
  }
  cv.finish();

  struct Job {
    std::string id;
    size_t split;
    uint64_t scan_seed;
  };
  std::vector<Job> jobs_list;
  size_t global = 0;
  for (size_t s = 0; s < 4; ++s) {
    for (int64_t i = 0; i < split_counts[s]; ++i, ++global) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s%03lld", split_prefix[s], static_cast<long long>(i));
      jobs_list.push_back({buf, s, derive_seed(seed, "scan", global)});
    }
  }

  std::vector<TreePhantom> phantoms(jobs_list.size());
  parallel_for(jobs_list.size(), args.jobs, [&](size_t k) {
    const Job& jb = jobs_list[k];
    PhantomSpec ps;
    ps.dims = dims;
    ps.spacing = spacing;
    ps.tree = base_tree;
    ps.intensity = split_intensity[jb.split];
    ps.seed = jb.scan_seed;
    Rng jr(derive_seed(jb.scan_seed, "jitter"));
    const double dv = jitter.vessel > 0 ? jr.uniform(-jitter.vessel, jitter.vessel) : 0.0;
    const double db = jitter.background > 0 ? jr.uniform(-jitter.background, jitter.background) : 0.0;
    const double dn = jitter.noise_sigma > 0 ? jr.uniform(-jitter.noise_sigma, jitter.noise_sigma) : 0.0;
    const double dr = jitter.root_radius_mm > 0 ? jr.uniform(-jitter.root_radius_mm, jitter.root_radius_mm) : 0.0;
    ps.intensity.vessel += static_cast<float>(dv);
    ps.intensity.background += static_cast<float>(db);
    ps.intensity.noise_sigma = std::max(0.0, ps.intensity.noise_sigma + dn);
    ps.tree.root_radius_mm = std::max(0.3, ps.tree.root_radius_mm + dr);
    phantoms[k] = generate_tree_phantom(ps);
  });

  std::array<json, 4> split_scans{json::array(), json::array(), json::array(), json::array()};
  for (size_t k = 0; k < jobs_list.size(); ++k) {
    const Job& jb = jobs_list[k];
    const TreePhantom& ph = phantoms[k];
    if (!ph.truth.clearance_ok)
      log_info("phantom %s: clearance %.3f mm below minimum", jb.id.c_str(), ph.truth.clearance_mm);
    run.write_volume(jb.id, ph.grid);
    run.write_volume(jb.id + ".mask", ph.mask);
    run.write_json(jb.id + ".truth.json", tree_truth_to_json(ph.truth));
    split_scans[jb.split].push_back(
        {{"id", jb.id}, {"grid", jb.id + ".vvol.json"}, {"mask", jb.id + ".mask.vvol.json"}});
  }
  for (size_t s = 0; s < 4; ++s) {
    run.write_json(std::string(split_names[s]) + ".json", json{{"scans", split_scans[s]}});
  }

  json effective = {{"kind", "corpus"},
                    {"dims", {dims.nz, dims.ny, dims.nx}},
                    {"spacing_mm", {spacing.dz, spacing.dy, spacing.dx}},
                    {"tree", tree_params_to_json(base_tree)},
                    {"intensity", intensity_to_json(base_intensity)},
                    {"jitter", jitter_to_json(jitter)},
                    {"splits",
                     {{"labeled", split_counts[0]},
                      {"validation", split_counts[1]},
                      {"unlabeled", split_counts[2]},
                      {"test", split_counts[3]}}},
                    {"seed", seed}};
  if (!overrides_json.empty()) effective["overrides"] = overrides_json;
  run.finalize("phantom", seed, effective);
  return 0;
}

// ---- train -----------------------------------------------------------------

struct PseudoEntry {
  std::string id;
  std::string grid;
  std::string pseudo_mask;
};

std::vector<PseudoEntry> load_selection_files(const std::vector<std::string>& paths, RunWriter& run) {
  std::vector<PseudoEntry> out;
  for (const auto& path : paths) {
    run.record_input(path);
    const json j = load_json_file(path);
    ConfigView cv(j, fs::path(path).filename().string());
    cv.integer("iteration", 0);
    cv.boolean("accept_all", false);
    const json* sel = cv.array("selected");
    if (!sel) throw std::invalid_argument("selection file '" + path + "' missing \"selected\" array");
    cv.array("remainder");
    cv.finish();
    for (const auto& item : *sel) {
      ConfigView ev(item, "selected[]");
      PseudoEntry e;
      e.id = ev.require_str("id");
      e.grid = ev.require_str("grid");
      e.pseudo_mask = ev.require_str("pseudo_mask");
      ev.number("stability", 0.0);
      ev.number("mean_precision", 0.0);
      ev.number("mean_dice", 0.0);
      ev.finish();
      run.record_input(e.grid);
      run.record_input(e.pseudo_mask);
      out.push_back(std::move(e));
    }
  }
  return out;
}

int cmd_train(const CommonArgs& args) {
  RunWriter run(args.out_dir);
  run.record_input(args.config_path);
  const json cfg_json = load_json_file(args.config_path);
  ConfigView cv(cfg_json, "");
  const std::string labeled_path = cv.require_str("labeled");
  const std::string validation_path = cv.require_str("validation");
  const TrainConfig train_cfg = parse_train_config(cv.object("train"));
  const FeatureConfig feat_cfg = parse_feature_config(cv.object("features"));
  const AugmentationSpec aug = parse_augment(cv.object("augment"));
  const int64_t stage = cv.integer("stage", 0);
  if (stage < 0) throw std::invalid_argument("config: stage must be >= 0");
  std::vector<std::string> pseudo_paths;
  if (const json* arr = cv.array("pseudo")) {
    for (const auto& p : *arr) {
      if (!p.is_string()) throw std::invalid_argument("config: pseudo must be an array of selection file paths");
      pseudo_paths.push_back(p.get<std::string>());
    }
  }
  const uint64_t seed = effective_seed(cv, args);
  cv.finish();

  const std::vector<SplitEntry> labeled_entries = load_split(labeled_path, run);
  const std::vector<SplitEntry> validation_entries = load_split(validation_path, run);
  const std::vector<Scan> labeled = load_scans(labeled_entries, true);
  const std::vector<Scan> validation = load_scans(validation_entries, true);
  const std::vector<PseudoEntry> pseudo_entries = load_selection_files(pseudo_paths, run);
  if (labeled.empty()) throw std::invalid_argument("train: empty labeled split");
  if (validation.empty()) throw std::invalid_argument("train: empty validation split");

  std::vector<const VolumeGrid*> grids;
  for (const auto& s : labeled) grids.push_back(&s.grid);
  const FeaturePipeline features = FeaturePipeline::fit(grids, feat_cfg, derive_seed(seed, "features"));

  // Mirrors one pipeline training stage bit for bit: weak augmentation on
  // labeled scans, strong-after-weak on pseudo-labeled scans, stage-derived
  // seeds throughout.
  struct Materialized {
    FeatureVolume features;
    BinaryMask labels;
  };
  std::vector<Materialized> scans;
  scans.reserve(labeled.size() + pseudo_entries.size());
  AugmentationSpec aug_seeded = aug;
  aug_seeded.seed = seed;
  for (size_t i = 0; i < labeled.size(); ++i) {
    const uint64_t dseed = derive_seed(seed, "augment-labeled", static_cast<uint64_t>(stage), i);
    auto [g, m] = apply_weak(labeled[i].grid, labeled[i].mask, aug_seeded, dseed);
    scans.push_back({features.transform(g), std::move(m)});
  }
  for (size_t i = 0; i < pseudo_entries.size(); ++i) {
    const VolumeGrid g0 = load_volume(pseudo_entries[i].grid);
    const BinaryMask m0 = load_mask(pseudo_entries[i].pseudo_mask);
    const uint64_t dseed = derive_seed(seed, "augment-pseudo", static_cast<uint64_t>(stage), i);
    auto [g1, m1] = apply_weak(g0, m0, aug_seeded, dseed);
    auto [g2, m2] = apply_strong(g1, m1, aug_seeded, dseed);
    scans.push_back({features.transform(g2), std::move(m2)});
  }
  std::vector<Materialized> val_scans;
  val_scans.reserve(validation.size());
  for (const auto& s : validation) val_scans.push_back({features.transform(s.grid), s.mask});

  std::vector<TrainScan> train_views, val_views;
  for (const auto& s : scans) train_views.push_back({&s.features, &s.labels});
  for (const auto& s : val_scans) val_views.push_back({&s.features, &s.labels});

  TrainConfig tc = train_cfg;
  tc.seed = derive_seed(seed, "train", static_cast<uint64_t>(stage));
  const TrainResult result = train(train_views, val_views, tc);

  run.write_json("model.json", model_to_json(result.best().params, features));
  run.write_json("checkpoints.json", checkpoints_to_json(result));

  json pseudo_json = json::array();
  for (const auto& p : pseudo_paths) pseudo_json.push_back(p);
  const json effective = {{"labeled", labeled_path},
                          {"validation", validation_path},
                          {"train", train_config_to_json(train_cfg)},
                          {"features", feature_config_to_json(feat_cfg)},
                          {"augment", augment_to_json_cfg(aug)},
                          {"stage", stage},
                          {"pseudo", pseudo_json},
                          {"seed", seed}};
  run.finalize("train", seed, effective);
  return 0;
}

// ---- pseudolabel -----------------------------------------------------------

int cmd_pseudolabel(const CommonArgs& args) {
  RunWriter run(args.out_dir);
  run.record_input(args.config_path);
  const json cfg_json = load_json_file(args.config_path);
  ConfigView cv(cfg_json, "");
  const std::string model_path = cv.require_str("model");
  const std::string checkpoints_path = cv.require_str("checkpoints");
  const std::string unlabeled_path = cv.require_str("unlabeled");
  const int64_t stability_k = cv.integer("stability_k", 5);
  const double threshold = cv.number("binarize_threshold", 0.5);
  const uint64_t seed = effective_seed(cv, args);
  cv.finish();
  if (stability_k < 2) throw std::invalid_argument("config: stability_k must be >= 2");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("config: binarize_threshold must be in (0,1)");

  const LoadedModel model = load_model(model_path, run);
  run.record_input(checkpoints_path);
  const TrainResult checkpoints = checkpoints_from_json(load_json_file(checkpoints_path));
  const std::vector<SplitEntry> entries = load_split(unlabeled_path, run);
  if (entries.empty()) throw std::invalid_argument("pseudolabel: empty unlabeled split");

  const size_t k = std::min(static_cast<size_t>(stability_k), checkpoints.checkpoints.size());
  const std::vector<Checkpoint> window(checkpoints.checkpoints.end() - static_cast<ptrdiff_t>(k),
                                       checkpoints.checkpoints.end());
  if (window.size() < 2) throw std::invalid_argument("pseudolabel: need at least 2 checkpoints");

  struct ScanFeatures {
    FeatureVolume features;
  };
  std::vector<ScanFeatures> feats(entries.size());
  parallel_for(entries.size(), args.jobs, [&](size_t i) {
    feats[i].features = model.features.transform(load_volume(entries[i].grid));
  });
  std::vector<UnlabeledScan> views;
  views.reserve(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) views.push_back({entries[i].id, &feats[i].features});

  const std::vector<PseudoLabelCandidate> candidates =
      generate_candidates(window, checkpoints.best(), views, threshold);

  json cand_json = json::array();
  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const std::string base = c.scan_id + ".pseudo";
    run.write_volume(base, c.pseudo_label);
    json item = {{"id", c.scan_id},
                 {"grid", fs::absolute(entries[i].grid).string()},
                 {"pseudo_mask", fs::absolute(run.out / (base + ".vvol.json")).string()},
                 {"stability", c.stability},
                 {"mean_precision", c.mean_precision},
                 {"mean_dice", c.mean_dice}};
    if (!entries[i].mask.empty()) item["mask"] = fs::absolute(entries[i].mask).string();
    cand_json.push_back(std::move(item));
  }
  run.write_json("candidates.json",
                 json{{"stability_k", stability_k}, {"binarize_threshold", threshold}, {"candidates", cand_json}});

  const json effective = {{"model", model_path},
                          {"checkpoints", checkpoints_path},
                          {"unlabeled", unlabeled_path},
                          {"stability_k", stability_k},
                          {"binarize_threshold", threshold},
                          {"seed", seed}};
  run.finalize("pseudolabel", seed, effective);
  return 0;
}

// ---- select ----------------------------------------------------------------

int cmd_select(const CommonArgs& args) {
  RunWriter run(args.out_dir);
  run.record_input(args.config_path);
  const json cfg_json = load_json_file(args.config_path);
  ConfigView cv(cfg_json, "");
  const std::string candidates_path = cv.require_str("candidates");
  const SelectionPolicy policy = parse_policy(cv.object("policy"));
  const int64_t iteration = cv.integer("iteration", 0);
  const bool accept_all = cv.boolean("accept_all", false);
  const uint64_t seed = effective_seed(cv, args);
  cv.finish();
  if (iteration < 0) throw std::invalid_argument("config: iteration must be >= 0");

  run.record_input(candidates_path);
  const json cand_doc = load_json_file(candidates_path);
  struct CandEntry {
    PseudoLabelCandidate cand;
    std::string grid, pseudo_mask, mask;
  };
  std::vector<CandEntry> entries;
  for (const auto& item : cand_doc.at("candidates")) {
    CandEntry e;
    e.cand.scan_id = item.at("id").get<std::string>();
    e.cand.stability = item.at("stability").get<double>();
    e.cand.mean_precision = item.at("mean_precision").get<double>();
    e.cand.mean_dice = item.at("mean_dice").get<double>();
    e.grid = item.at("grid").get<std::string>();
    e.pseudo_mask = item.at("pseudo_mask").get<std::string>();
    if (item.contains("mask")) e.mask = item.at("mask").get<std::string>();
    entries.push_back(std::move(e));
  }

  std::vector<std::string> selected_ids, remainder_ids;
  if (accept_all) {
    for (const auto& e : entries) selected_ids.push_back(e.cand.scan_id);
  } else {
    std::vector<PseudoLabelCandidate> cands;
    cands.reserve(entries.size());
    for (const auto& e : entries) cands.push_back(e.cand);
    const Selection sel = select_reliable(cands, policy, static_cast<size_t>(iteration));
    selected_ids = sel.selected;
    remainder_ids = sel.remainder;
  }

  const auto find_entry = [&](const std::string& id) -> const CandEntry& {
    for (const auto& e : entries)
      if (e.cand.scan_id == id) return e;
    throw std::logic_error("select: unknown candidate id " + id);
  };

  json selected_json = json::array();
  for (const auto& id : selected_ids) {
    const CandEntry& e = find_entry(id);
    selected_json.push_back({{"id", e.cand.scan_id},
                             {"grid", e.grid},
                             {"pseudo_mask", e.pseudo_mask},
                             {"stability", e.cand.stability},
                             {"mean_precision", e.cand.mean_precision},
                             {"mean_dice", e.cand.mean_dice}});
  }
  json remainder_json = json::array();
  json remainder_scans = json::array();
  for (const auto& id : remainder_ids) {
    const CandEntry& e = find_entry(id);
    remainder_json.push_back(id);
    json scan = {{"id", e.cand.scan_id}, {"grid", e.grid}};
    if (!e.mask.empty()) scan["mask"] = e.mask;
    remainder_scans.push_back(std::move(scan));
  }
  run.write_json("selection.json", json{{"iteration", iteration},
                                        {"accept_all", accept_all},
                                        {"selected", selected_json},
                                        {"remainder", remainder_json}});
  run.write_json("remainder.json", json{{"scans", remainder_scans}});

  const json effective = {{"candidates", candidates_path},
                          {"policy", policy_to_json(policy)},
                          {"iteration", iteration},
                          {"accept_all", accept_all},
                          {"seed", seed}};
  run.finalize("select", seed, effective);
  return 0;
}

// ---- pipeline --------------------------------------------------------------

int cmd_pipeline(const CommonArgs& args) {
  RunWriter run(args.out_dir);
  run.record_input(args.config_path);
  const json cfg_json = load_json_file(args.config_path);
  ConfigView cv(cfg_json, "");
  const std::string labeled_path = cv.require_str("labeled");
  const std::string validation_path = cv.require_str("validation");
  const std::string unlabeled_path = cv.require_str("unlabeled");
  const std::string test_path = cv.require_str("test");

  SelfTrainConfig cfg;
  cfg.train = parse_train_config(cv.object("train"));
  cfg.features = parse_feature_config(cv.object("features"));
  cfg.augment = parse_augment(cv.object("augment"));
  cfg.policy = parse_policy(cv.object("policy"));
  cfg.stability_k = static_cast<size_t>(cv.integer("stability_k", static_cast<int64_t>(cfg.stability_k)));
  cfg.binarize_threshold = cv.number("binarize_threshold", cfg.binarize_threshold);
  cfg.seed = effective_seed(cv, args);
  cv.finish();
  cfg.augment.seed = cfg.seed;
  cfg.validate();

  Dataset data;
  data.labeled = load_scans(load_split(labeled_path, run), true);
  data.validation = load_scans(load_split(validation_path, run), true);
  data.test = load_scans(load_split(test_path, run), true);
  data.unlabeled = load_scans(load_split(unlabeled_path, run), false);

  const PipelineResult result = run_pipeline(data, cfg);

  run.write_json("report.json", pipeline_report_to_json(result.report));
  run.write_json("final_model.json", model_to_json(result.final_model, result.features));
  std::vector<std::string> rows{"stage,dsc,iou,sensitivity,precision"};
  for (const auto& st : result.report.stages) {
    rows.push_back(st.stage + "," + format_fixed(st.test_metrics.dsc, 4) + "," + format_fixed(st.test_metrics.iou, 4) +
                   "," + format_fixed(st.test_metrics.sensitivity, 4) + "," +
                   format_fixed(st.test_metrics.precision, 4));
  }
  run.write_csv("stage_metrics.csv", rows);

  const json effective = {{"labeled", labeled_path},
                          {"validation", validation_path},
                          {"unlabeled", unlabeled_path},
                          {"test", test_path},
                          {"train", train_config_to_json(cfg.train)},
                          {"features", feature_config_to_json(cfg.features)},
                          {"augment", augment_to_json_cfg(cfg.augment)},
                          {"policy", policy_to_json(cfg.policy)},
                          {"stability_k", cfg.stability_k},
                          {"binarize_threshold", cfg.binarize_threshold},
                          {"seed", cfg.seed}};
  run.finalize("pipeline", cfg.seed, effective);
  return 0;
}

// ---- evaluate ----------------------------------------------------------------

int cmd_evaluate(const CommonArgs& args) {
  RunWriter run(args.out_dir);
  run.record_input(args.config_path);
  const json cfg_json = load_json_file(args.config_path);
  ConfigView cv(cfg_json, "");
  const std::string model_path = cv.require_str("model");
  const std::string scans_path = cv.require_str("scans");
  const double threshold = cv.number("binarize_threshold", 0.5);
  const uint64_t seed = effective_seed(cv, args);
  cv.finish();
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("config: binarize_threshold must be in (0,1)");

  const LoadedModel model = load_model(model_path, run);
  const std::vector<SplitEntry> entries = load_split(scans_path, run);
  if (entries.empty()) throw std::invalid_argument("evaluate: empty scan list");

  std::vector<std::string> rows(entries.size());
  parallel_for(entries.size(), args.jobs, [&](size_t i) {
    const VolumeGrid grid = load_volume(entries[i].grid);
    if (entries[i].mask.empty()) throw std::invalid_argument("scan '" + entries[i].id + "' requires a mask path");
    const BinaryMask gt = load_mask(entries[i].mask);
    detail::require_same_dims(grid.dims, gt.dims, ("scan " + entries[i].id).c_str());
    const BinaryMask pred = binarize(predict_probs(model.params, model.features.transform(grid)), threshold);
    const ConfusionCounts c = confusion(pred, gt);
    // Degenerate denominators report 0 so a single empty prediction cannot
    // kill a whole evaluation run.
    const double sens = (c.tp + c.fn) ? sensitivity(c) : 0.0;
    const double prec = (c.tp + c.fp) ? precision(c) : 0.0;
    rows[i] = metrics_csv_row(entries[i].id, dsc(c), iou(c), sens, prec);
  });
  std::vector<std::string> csv{metrics_csv_header()};
  csv.insert(csv.end(), rows.begin(), rows.end());
  run.write_csv("metrics.csv", csv);

  const json effective = {
      {"model", model_path}, {"scans", scans_path}, {"binarize_threshold", threshold}, {"seed", seed}};
  run.finalize("evaluate", seed, effective);
  return 0;
}

// ---- morph -------------------------------------------------------------------

std::string mask_scan_id(const std::string& path) {
  std::string base = fs::path(path).filename().string();
  for (const char* suffix : {".vvol.json", ".vvol.raw"}) {
    if (base.size() > std::strlen(suffix) && base.ends_with(suffix)) {
      base.resize(base.size() - std::strlen(suffix));
      break;
    }
  }
  if (base.size() > 5 && base.ends_with(".mask")) base.resize(base.size() - 5);
  return base;
}

int cmd_morph(const CommonArgs& args, const std::vector<std::string>& mask_paths) {
  RunWriter run(args.out_dir);
  MorphOptions opts;
  uint64_t seed = args.seed_override.value_or(0);
  json morph_cfg = json::object();
  if (!args.config_path.empty()) {
    run.record_input(args.config_path);
    const json cfg_json = load_json_file(args.config_path);
    ConfigView cv(cfg_json, "");
    opts.prune_spurs_mm = cv.number("prune_spurs_mm", 0.0);
    seed = effective_seed(cv, args);
    cv.finish();
    if (opts.prune_spurs_mm < 0) throw std::invalid_argument("config: prune_spurs_mm must be >= 0");
  }
  if (mask_paths.empty()) throw std::invalid_argument("morph: at least one --mask is required");
  for (const auto& p : mask_paths) run.record_input(p);

  std::vector<MorphometryResult> results(mask_paths.size());
  parallel_for(mask_paths.size(), args.jobs, [&](size_t i) {
    results[i] = analyze_mask(load_mask(mask_paths[i]), opts);
  });

  std::vector<std::string> rows{morph_csv_header()};
  for (size_t i = 0; i < mask_paths.size(); ++i) {
    const std::string id = mask_scan_id(mask_paths[i]);
    rows.push_back(morph_csv_row(id, results[i].report));
    std::vector<std::string> graph_rows{graph_csv_header()};
    for (const auto& seg : results[i].graph.segments) graph_rows.push_back(graph_csv_row(seg));
    run.write_csv("graph_" + id + ".csv", graph_rows);
  }
  run.write_csv("morph.csv", rows);

  json masks_json = json::array();
  for (const auto& p : mask_paths) masks_json.push_back(p);
  const json effective = {{"masks", masks_json}, {"prune_spurs_mm", opts.prune_spurs_mm}, {"seed", seed}};
  run.finalize("morph", seed, effective);
  return 0;
}

// ---- stats -------------------------------------------------------------------

int cmd_stats(const CommonArgs& args, const std::vector<std::string>& group_specs) {
  RunWriter run(args.out_dir);
  uint64_t seed = args.seed_override.value_or(0);
  std::vector<std::string> wanted_metrics;
  if (!args.config_path.empty()) {
    run.record_input(args.config_path);
    const json cfg_json = load_json_file(args.config_path);
    ConfigView cv(cfg_json, "");
    if (const json* arr = cv.array("metrics")) {
      for (const auto& m : *arr) {
        if (!m.is_string()) throw std::invalid_argument("config: metrics must be an array of column names");
        wanted_metrics.push_back(m.get<std::string>());
      }
    }
    seed = effective_seed(cv, args);
    cv.finish();
  }
  if (group_specs.size() < 2) throw std::invalid_argument("stats: need at least two --group NAME=path arguments");

  struct Group {
    std::string name;
    NumericTable table;
  };
  std::vector<Group> groups;
  std::set<std::string> names;
  for (const auto& spec : group_specs) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
      throw std::invalid_argument("stats: --group expects NAME=path, got '" + spec + "'");
    Group g;
    g.name = spec.substr(0, eq);
    const std::string path = spec.substr(eq + 1);
    if (!names.insert(g.name).second) throw std::invalid_argument("stats: duplicate group name '" + g.name + "'");
    run.record_input(path);
    g.table = read_numeric_csv(path);
    groups.push_back(std::move(g));
  }
  for (const auto& g : groups) {
    if (g.table.columns != groups[0].table.columns)
      throw std::invalid_argument("stats: group '" + g.name + "' has different columns than '" + groups[0].name +
                                  "'");
  }
  const std::vector<std::string>& columns = groups[0].table.columns;
  if (wanted_metrics.empty()) wanted_metrics = columns;
  for (const auto& m : wanted_metrics) {
    if (std::find(columns.begin(), columns.end(), m) == columns.end())
      throw std::invalid_argument("stats: unknown metric column '" + m + "'");
  }

  std::vector<std::string> rows{stats_csv_header()};
  for (const auto& metric : wanted_metrics) {
    const size_t col = static_cast<size_t>(std::find(columns.begin(), columns.end(), metric) - columns.begin());
    std::vector<GroupSamples> samples;
    for (const auto& g : groups) {
      GroupSamples gs;
      gs.name = g.name;
      for (const auto& row : g.table.rows) gs.values.push_back(row[col]);
      samples.push_back(std::move(gs));
    }
    try {
      const AnovaResult anova = one_way_anova(samples);
      rows.push_back(stats_csv_row(metric, "anova", anova.f, anova.p, anova.p, anova.p < 0.05));
      if (anova.p < 0.05) {
        for (const auto& pr : bonferroni_posthoc(samples)) {
          rows.push_back(
              stats_csv_row(metric, pr.group_a + " vs " + pr.group_b, pr.t, pr.p_raw, pr.p_adjusted, pr.significant));
        }
      }
    } catch (const std::domain_error& e) {
      // Degenerate column (zero within-group variance but group means differ):
      // skip the metric rather than abort the whole report.
      log_info("stats: skipping metric %s: %s", metric.c_str(), e.what());
    }
  }
  run.write_csv("stats.csv", rows);

  json groups_json = json::array();
  for (const auto& spec : group_specs) groups_json.push_back(spec);
  json metrics_json = json::array();
  for (const auto& m : wanted_metrics) metrics_json.push_back(m);
  const json effective = {{"groups", groups_json}, {"metrics", metrics_json}, {"seed", seed}};
  run.finalize("stats", seed, effective);
  return 0;
}

// ---- ingest-vessel12 ---------------------------------------------------------

int cmd_ingest(const CommonArgs& args, const std::string& csv_path, const std::string& dims_str,
               const std::string& spacing_str, std::string id) {
  RunWriter run(args.out_dir);
  const auto parse_triple = [](const std::string& s, const char* what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        size_t pos = 0;
        out.push_back(std::stod(tok, &pos));
        if (pos != tok.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw std::invalid_argument(std::string(what) + " must be three comma-separated numbers");
      }
    }
    if (out.size() != 3) throw std::invalid_argument(std::string(what) + " must be three comma-separated numbers");
    return out;
  };
  const std::vector<double> dv = parse_triple(dims_str, "--dims");
  for (const double d : dv)
    if (d < 1 || d != std::floor(d)) throw std::invalid_argument("--dims must be positive integers");
  const Dims dims{static_cast<int64_t>(dv[0]), static_cast<int64_t>(dv[1]), static_cast<int64_t>(dv[2])};
  const std::vector<double> sv = parse_triple(spacing_str, "--spacing");
  const Spacing spacing{sv[0], sv[1], sv[2]};
  spacing.validate();

  run.record_input(csv_path);
  if (id.empty()) {
    id = fs::path(csv_path).stem().string();
    if (id.empty()) id = "scan";
  }

  const std::vector<Vessel12Point> points = load_vessel12_points(csv_path, dims);
  BinaryMask mask;
  mask.dims = dims;
  mask.spacing = spacing;
  mask.bits.assign(dims.total(), 0);
  size_t n_pos = 0;
  for (const auto& p : points) {
    if (p.label == 1) {
      mask.at(p.z, p.y, p.x) = 1;
      ++n_pos;
    }
  }
  log_info("ingest-vessel12: %zu points, %zu positive", points.size(), n_pos);
  run.write_volume(id + ".mask", mask);

  const uint64_t seed = args.seed_override.value_or(0);
  const json effective = {{"csv", csv_path},
                          {"dims", {dims.nz, dims.ny, dims.nx}},
                          {"spacing_mm", {spacing.dz, spacing.dy, spacing.dx}},
                          {"id", id},
                          {"seed", seed}};
  run.finalize("ingest-vessel12", seed, effective);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vesselforge: self-training vessel segmentation toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  int64_t seed_flag = 0;
  bool seed_given = false;

  const auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* copt = sub->add_option("--config", common.config_path, "JSON config file");
    if (config_required) copt->required();
    sub->add_option("--out", common.out_dir, "output directory")->required();
    sub->add_option("--seed", seed_flag, "override the config seed")->each([&](const std::string&) {
      seed_given = true;
    });
    sub->add_option("--jobs", common.jobs, "scan-level parallelism")->check(CLI::PositiveNumber);
  };

  auto* p_phantom = app.add_subcommand("phantom", "generate a synthetic phantom or corpus");
  p_phantom->add_option("--spec", common.config_path, "phantom spec JSON (alias for --config)");
  add_common(p_phantom, false);
  auto* p_train = app.add_subcommand("train", "train a supervised model (one pipeline stage)");
  add_common(p_train, true);
  auto* p_pseudo = app.add_subcommand("pseudolabel", "score checkpoint agreement and emit pseudo labels");
  add_common(p_pseudo, true);
  auto* p_select = app.add_subcommand("select", "apply the reliable-candidate selection policy");
  add_common(p_select, true);
  auto* p_pipeline = app.add_subcommand("pipeline", "run the full self-training loop");
  add_common(p_pipeline, true);
  auto* p_iterate = app.add_subcommand("iterate", "alias of pipeline");
  add_common(p_iterate, true);
  auto* p_evaluate = app.add_subcommand("evaluate", "segment scans and report metrics against ground truth");
  add_common(p_evaluate, true);

  std::vector<std::string> mask_paths;
  auto* p_morph = app.add_subcommand("morph", "compute morphometry reports for masks");
  p_morph->add_option("--mask", mask_paths, "mask volume (repeatable)")->required();
  add_common(p_morph, false);

  std::vector<std::string> group_specs;
  auto* p_stats = app.add_subcommand("stats", "ANOVA + Bonferroni post-hoc over grouped report CSVs");
  p_stats->add_option("--group", group_specs, "NAME=morph_csv_path (repeatable)")->required();
  add_common(p_stats, false);

  std::string ingest_csv, ingest_dims, ingest_spacing, ingest_id;
  auto* p_ingest = app.add_subcommand("ingest-vessel12", "convert point-annotation CSV to a mask volume");
  p_ingest->add_option("--csv", ingest_csv, "annotation CSV (x, y, z, label per row)")->required();
  p_ingest->add_option("--dims", ingest_dims, "volume dims as nz,ny,nx")->required();
  p_ingest->add_option("--spacing", ingest_spacing, "voxel spacing as dz,dy,dx in mm")->required();
  p_ingest->add_option("--id", ingest_id, "output scan id (default: CSV stem)");
  add_common(p_ingest, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (seed_given) common.seed_override = static_cast<uint64_t>(seed_flag);

  try {
    if (p_phantom->parsed()) {
      if (common.config_path.empty()) throw std::invalid_argument("phantom: --spec (or --config) is required");
      return cmd_phantom(common);
    }
    if (p_train->parsed()) return cmd_train(common);
    if (p_pseudo->parsed()) return cmd_pseudolabel(common);
    if (p_select->parsed()) return cmd_select(common);
    if (p_pipeline->parsed() || p_iterate->parsed()) return cmd_pipeline(common);
    if (p_evaluate->parsed()) return cmd_evaluate(common);
    if (p_morph->parsed()) return cmd_morph(common, mask_paths);
    if (p_stats->parsed()) return cmd_stats(common, group_specs);
    if (p_ingest->parsed()) return cmd_ingest(common, ingest_csv, ingest_dims, ingest_spacing, ingest_id);
    throw std::logic_error("no subcommand dispatched");
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
