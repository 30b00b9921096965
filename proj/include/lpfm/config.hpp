#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpfm/attention.hpp"
#include "lpfm/dataset.hpp"
#include "lpfm/errors.hpp"
#include "lpfm/model.hpp"
#include "lpfm/train.hpp"

namespace lpfm {

using json = nlohmann::ordered_json;

inline constexpr int kConfigSchemaVersion = 1;

/// How the per-layer head table is built from a scalar knob.
struct AssignmentSpec {
  std::string strategy = "uniform";  // uniform | mix_depth | interleave | explicit
  std::size_t k = 0;                 // Laplacian heads per layer for uniform
  bool laplacian_first = true;       // interleave
  std::vector<std::string> layers;   // explicit: one string of S/L per layer

  HeadAssignment build(std::size_t depth, std::size_t heads) const {
    if (strategy == "uniform") return HeadAssignment::uniform(depth, heads, k);
    if (strategy == "mix_depth") return HeadAssignment::mix_depth(depth, heads);
    if (strategy == "interleave") return HeadAssignment::interleave(depth, heads, laplacian_first);
    if (strategy == "explicit") {
      HeadAssignment a;
      for (const auto& s : layers) {
        std::vector<HeadKind> layer;
        for (char c : s) layer.push_back(head_kind_from_code(c));
        a.per_layer.push_back(std::move(layer));
      }
      a.validate(depth, heads);
      return a;
    }
    throw ConfigError("unknown head assignment strategy '" + strategy + "'");
  }
};

struct DataSpec {
  std::string kind = "synthetic";  // synthetic | lpds | idx
  SyntheticSpec synthetic;
  std::string train_path, test_path;                  // lpds
  std::string train_images, train_labels;             // idx
  std::string test_images, test_labels;               // idx
};

struct SweepSpec {
  std::vector<std::size_t> laplacian_heads{0};
  std::vector<double> drop_path{0.0};
  std::vector<std::uint64_t> seeds{0};
};

struct AnalysisSpec {
  std::string split = "test";  // test | train
  std::size_t pca_classes = 10;
  std::uint64_t sample_seed = 0;
};

struct OutputSpec {
  std::string dir = "out";
  std::vector<std::string> formats{"json", "csv"};
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::string precision = "float64";
  ModelConfig model;
  AssignmentSpec assignment;
  TrainHyper train;
  DataSpec data;
  SweepSpec sweep;
  AnalysisSpec analysis;
  OutputSpec output;
  std::size_t workers = 1;

  void validate() const {
    if (schema_version != kConfigSchemaVersion)
      throw ConfigError("unsupported config schema_version " + std::to_string(schema_version));
    if (precision != "float64" && precision != "float32") throw ConfigError("precision must be float64 or float32");
    if (sweep.seeds.empty()) throw ConfigError("sweep.seeds must be nonempty");
    if (sweep.laplacian_heads.empty() || sweep.drop_path.empty())
      throw ConfigError("sweep axes must be nonempty");
    for (auto k : sweep.laplacian_heads)
      if (k > model.heads) throw ConfigError("swept k=" + std::to_string(k) + " exceeds heads");
    for (double p : sweep.drop_path)
      if (!(p >= 0.0 && p < 1.0)) throw ConfigError("swept drop_path must lie in [0, 1)");
    if (analysis.split != "test" && analysis.split != "train") throw ConfigError("analysis.split must be test or train");
    for (const auto& f : output.formats)
      if (f != "json" && f != "csv" && f != "svg") throw ConfigError("unknown output format '" + f + "'");
    if (workers == 0) throw ConfigError("workers must be >= 1");
    if (data.kind != "synthetic" && data.kind != "lpds" && data.kind != "idx")
      throw ConfigError("data.kind must be synthetic, lpds or idx");
    ModelConfig m = model;
    m.assignment = assignment.build(m.depth, m.heads);
    m.validate();
  }

  /// Model config for one sweep cell.
  ModelConfig cell_model(std::size_t k, double drop_path) const {
    ModelConfig m = model;
    AssignmentSpec a = assignment;
    a.k = k;
    m.assignment = a.build(m.depth, m.heads);
    m.drop_path = drop_path;
    return m;
  }
};

namespace detail {
template <class T>
void get_to(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string("config section '") + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(std::string("unknown config field '") + section + "." + it.key() + "'");
  }
}
}  // namespace detail

inline const char* input_kind_name(InputKind k) { return k == InputKind::Image ? "image" : "synthetic_tokens"; }

inline json model_to_json(const ModelConfig& m) {
  json j;
  j["depth"] = m.depth;
  j["heads"] = m.heads;
  j["dim"] = m.dim;
  j["head_dim"] = m.head_dim;
  j["mlp_ratio"] = m.mlp_ratio;
  j["num_classes"] = m.num_classes;
  j["input"] = input_kind_name(m.input);
  j["seq_len"] = m.seq_len;
  j["token_dim"] = m.token_dim;
  j["image_size"] = m.image_size;
  j["patch_size"] = m.patch_size;
  j["channels"] = m.channels;
  j["drop_path"] = m.drop_path;
  j["qk_norm"] = m.qk_norm;
  j["ln_eps"] = m.ln_eps;
  j["init_std"] = m.init_std;
  json layers = json::array();
  for (const auto& layer : m.assignment.per_layer) {
    std::string s;
    for (auto k : layer) s += head_kind_code(k);
    layers.push_back(s);
  }
  j["assignment"] = layers;
  return j;
}

/// Parses the "model" section; the head table comes from `assignment` (or is
/// an explicit list of S/L strings when loading a resolved config).
inline void model_from_json(const json& j, ModelConfig& m, AssignmentSpec& a) {
  detail::check_keys(j, "model", {"depth", "heads", "dim", "head_dim", "mlp_ratio", "num_classes", "input", "seq_len",
                                  "token_dim", "image_size", "patch_size", "channels", "drop_path", "qk_norm",
                                  "ln_eps", "init_std", "assignment"});
  detail::get_to(j, "depth", m.depth);
  detail::get_to(j, "heads", m.heads);
  detail::get_to(j, "dim", m.dim);
  m.head_dim = m.heads ? m.dim / m.heads : 0;
  detail::get_to(j, "head_dim", m.head_dim);
  detail::get_to(j, "mlp_ratio", m.mlp_ratio);
  detail::get_to(j, "num_classes", m.num_classes);
  if (j.contains("input")) {
    const std::string s = j.at("input").get<std::string>();
    if (s == "image") m.input = InputKind::Image;
    else if (s == "synthetic_tokens") m.input = InputKind::SyntheticTokens;
    else throw ConfigError("model.input must be synthetic_tokens or image");
  }
  detail::get_to(j, "seq_len", m.seq_len);
  detail::get_to(j, "token_dim", m.token_dim);
  detail::get_to(j, "image_size", m.image_size);
  detail::get_to(j, "patch_size", m.patch_size);
  detail::get_to(j, "channels", m.channels);
  detail::get_to(j, "drop_path", m.drop_path);
  detail::get_to(j, "qk_norm", m.qk_norm);
  detail::get_to(j, "ln_eps", m.ln_eps);
  detail::get_to(j, "init_std", m.init_std);
  if (j.contains("assignment")) {
    const json& aj = j.at("assignment");
    if (aj.is_array()) {
      a.strategy = "explicit";
      a.layers = aj.get<std::vector<std::string>>();
    } else {
      detail::check_keys(aj, "model.assignment", {"strategy", "k", "laplacian_first", "layers"});
      detail::get_to(aj, "strategy", a.strategy);
      detail::get_to(aj, "k", a.k);
      detail::get_to(aj, "laplacian_first", a.laplacian_first);
      detail::get_to(aj, "layers", a.layers);
    }
  }
  m.assignment = a.build(m.depth, m.heads);
}

inline ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  AssignmentSpec a;
  model_from_json(j, m, a);
  return m;
}

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["precision"] = c.precision;
  json m = model_to_json(c.model);
  json a;
  a["strategy"] = c.assignment.strategy;
  a["k"] = c.assignment.k;
  a["laplacian_first"] = c.assignment.laplacian_first;
  a["layers"] = c.assignment.layers;
  m["assignment"] = a;
  j["model"] = m;
  const TrainHyper& t = c.train;
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"lr_peak", t.lr_peak},
                {"lr_start", t.lr_start},
                {"lr_min", t.lr_min},
                {"warmup_epochs", t.warmup_epochs},
                {"beta1", t.adamw.beta1},
                {"beta2", t.adamw.beta2},
                {"adam_eps", t.adamw.eps},
                {"weight_decay", t.adamw.weight_decay},
                {"grad_clip", t.adamw.grad_clip},
                {"trainable_prefixes", t.trainable_prefixes}};
  const SyntheticSpec& s = c.data.synthetic;
  j["data"] = {{"kind", c.data.kind},
               {"synthetic",
                {{"classes", s.classes},
                 {"per_class", s.per_class},
                 {"test_per_class", s.test_per_class},
                 {"seq_len", s.seq_len},
                 {"dim", s.dim},
                 {"center_scale", s.center_scale},
                 {"class_noise", s.class_noise},
                 {"seq_noise", s.seq_noise},
                 {"seed", s.seed}}},
               {"train_path", c.data.train_path},
               {"test_path", c.data.test_path},
               {"train_images", c.data.train_images},
               {"train_labels", c.data.train_labels},
               {"test_images", c.data.test_images},
               {"test_labels", c.data.test_labels}};
  if (!s.centers.empty()) j["data"]["synthetic"]["centers"] = s.centers;
  j["sweep"] = {{"laplacian_heads", c.sweep.laplacian_heads},
                {"drop_path", c.sweep.drop_path},
                {"seeds", c.sweep.seeds}};
  j["analysis"] = {{"split", c.analysis.split},
                   {"pca_classes", c.analysis.pca_classes},
                   {"sample_seed", c.analysis.sample_seed}};
  j["output"] = {{"dir", c.output.dir}, {"formats", c.output.formats}};
  j["workers"] = c.workers;
  return j;
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::check_keys(j, "", {"schema_version", "seed", "precision", "model", "train", "data", "sweep", "analysis",
                             "output", "workers"});
  detail::get_to(j, "schema_version", c.schema_version);
  if (c.schema_version != kConfigSchemaVersion)
    throw ConfigError("unsupported config schema_version " + std::to_string(c.schema_version));
  detail::get_to(j, "seed", c.seed);
  detail::get_to(j, "precision", c.precision);
  if (j.contains("model")) model_from_json(j.at("model"), c.model, c.assignment);
  else c.model.assignment = c.assignment.build(c.model.depth, c.model.heads);
  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::check_keys(t, "train", {"epochs", "batch_size", "lr_peak", "lr_start", "lr_min", "warmup_epochs", "beta1",
                                    "beta2", "adam_eps", "weight_decay", "grad_clip", "trainable_prefixes"});
    detail::get_to(t, "epochs", c.train.epochs);
    detail::get_to(t, "batch_size", c.train.batch_size);
    detail::get_to(t, "lr_peak", c.train.lr_peak);
    detail::get_to(t, "lr_start", c.train.lr_start);
    detail::get_to(t, "lr_min", c.train.lr_min);
    detail::get_to(t, "warmup_epochs", c.train.warmup_epochs);
    detail::get_to(t, "beta1", c.train.adamw.beta1);
    detail::get_to(t, "beta2", c.train.adamw.beta2);
    detail::get_to(t, "adam_eps", c.train.adamw.eps);
    detail::get_to(t, "weight_decay", c.train.adamw.weight_decay);
    detail::get_to(t, "grad_clip", c.train.adamw.grad_clip);
    detail::get_to(t, "trainable_prefixes", c.train.trainable_prefixes);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    detail::check_keys(d, "data", {"kind", "synthetic", "train_path", "test_path", "train_images", "train_labels",
                                   "test_images", "test_labels"});
    detail::get_to(d, "kind", c.data.kind);
    if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      detail::check_keys(s, "data.synthetic", {"classes", "per_class", "test_per_class", "seq_len", "dim",
                                               "center_scale", "class_noise", "seq_noise", "seed", "centers"});
      SyntheticSpec& sp = c.data.synthetic;
      detail::get_to(s, "classes", sp.classes);
      detail::get_to(s, "per_class", sp.per_class);
      detail::get_to(s, "test_per_class", sp.test_per_class);
      detail::get_to(s, "seq_len", sp.seq_len);
      detail::get_to(s, "dim", sp.dim);
      detail::get_to(s, "center_scale", sp.center_scale);
      detail::get_to(s, "class_noise", sp.class_noise);
      detail::get_to(s, "seq_noise", sp.seq_noise);
      detail::get_to(s, "seed", sp.seed);
      detail::get_to(s, "centers", sp.centers);
    }
    detail::get_to(d, "train_path", c.data.train_path);
    detail::get_to(d, "test_path", c.data.test_path);
    detail::get_to(d, "train_images", c.data.train_images);
    detail::get_to(d, "train_labels", c.data.train_labels);
    detail::get_to(d, "test_images", c.data.test_images);
    detail::get_to(d, "test_labels", c.data.test_labels);
  }
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    detail::check_keys(s, "sweep", {"laplacian_heads", "drop_path", "seeds"});
    detail::get_to(s, "laplacian_heads", c.sweep.laplacian_heads);
    detail::get_to(s, "drop_path", c.sweep.drop_path);
    detail::get_to(s, "seeds", c.sweep.seeds);
  }
  if (j.contains("analysis")) {
    const json& a = j.at("analysis");
    detail::check_keys(a, "analysis", {"split", "pca_classes", "sample_seed"});
    detail::get_to(a, "split", c.analysis.split);
    detail::get_to(a, "pca_classes", c.analysis.pca_classes);
    detail::get_to(a, "sample_seed", c.analysis.sample_seed);
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    detail::check_keys(o, "output", {"dir", "formats"});
    detail::get_to(o, "dir", c.output.dir);
    detail::get_to(o, "formats", c.output.formats);
  }
  detail::get_to(j, "workers", c.workers);
  c.validate();
  return c;
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(parse_json_text(ss.str(), path));
}

/// Digest of the model architecture, stored in checkpoints.
inline std::uint64_t model_digest(const ModelConfig& m) { return io::fnv1a(model_to_json(m).dump()); }

}  // namespace lpfm
