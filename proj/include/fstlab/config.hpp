#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fstlab/checkpoint.hpp"
#include "fstlab/dataset.hpp"
#include "fstlab/defense.hpp"
#include "fstlab/errors.hpp"
#include "fstlab/poison.hpp"
#include "fstlab/train.hpp"

namespace fstlab {

inline constexpr const char* kConfigSchema = "fstlab-config-v1";

// Defaults below are the calibrated toy-task settings; every key is
// optional. Shape of a full config (all keys shown with their defaults):
//
// {
//   "schema": "fstlab-config-v1",
//   "name": "experiment",
//   "output": "results",
//   "dataset": {"kind": "synthetic", "classes": 10, "perClass": 500,
//               "testPerClass": 100, "height": 16, "width": 16, "channels": 1,
//               "noiseSigma": 0.15, "grid": 4, "contrast": 1.0},
//      or {"kind": "idx", "classes": 10, "trainImages": .., "trainLabels": ..,
//          "testImages": .., "testLabels": ..}
//   "model": {"kind": "mlp", "hidden": [128, 64], "headHidden": []},
//      or {"kind": "conv", "channels": [8, 16], "hidden": [64]}
//   "train": {"epochs": 40, "batchSize": 32, "learningRate": 0.05,
//             "momentum": 0.9, "shuffleEachEpoch": true},
//   "attack": {"mode": "dirtyLabel", "targetLabel": 0, "coverRate": 0.0,
//              "patchSize": 3, "patchMargin": 0, "blendRatio": 0.2,
//              "insertionThreshold": 0.8},
//   "defense": {"learningRate": 0.01, "lpLearningRate": 0.3, "epochs": 10,
//               "batchSize": 10, "momentum": 0.9, "alpha": 0.2, "rho": 0.1,
//               "projection": true, "wholeHead": false, "lpReinit": false},
//   "eval": {"separationSamples": 200, "traceMetrics": true,
//            "cleanBaseline": false},
//   grid axes:
//   "triggers": ["patch"], "rates": [0.01], "tuneFractions": [0.02],
//   "defenses": ["FST"], "alphas": [], "seeds": [0]
// }
//
// "defenses" entries are names or objects overriding the "defense" block,
// e.g. {"kind": "FST", "projection": false}. A non-empty "alphas" list
// overrides alpha on every FST entry and multiplies only FST cells.

struct DatasetConfig {
  std::string kind = "synthetic";
  SyntheticSpec synthetic;
  std::size_t test_per_class = 100;
  std::size_t classes = 10;
  std::string train_images, train_labels, test_images, test_labels;
};

struct ModelConfig {
  std::string kind = "mlp";
  std::vector<std::size_t> hidden{128, 64};
  std::vector<std::size_t> head_hidden;
  std::vector<std::size_t> channels{8, 16};
};

struct AttackConfig {
  PoisonMode mode = PoisonMode::DirtyLabel;
  Label target_label = 0;
  double cover_rate = 0.0;
  std::size_t patch_size = 3;
  std::size_t patch_margin = 0;
  double blend_ratio = 0.2;
  double insertion_threshold = 0.80;
};

struct EvalConfig {
  std::size_t separation_samples = 200;
  bool trace_metrics = true;
  bool clean_baseline = false;
};

// One (trigger, rate, tuning fraction, seed, defense) combination.
struct Cell {
  std::size_t index = 0;
  TriggerKind trigger = TriggerKind::Patch;
  double rate = 0.01;
  double tune_fraction = 0.02;
  std::uint64_t seed = 0;
  DefenseConfig defense;

  std::string attack_key() const;
  std::string id() const { return attack_key() + "/" + defense.label(); }
};

struct ExperimentPlan {
  std::string name = "experiment";
  std::string output = "results";
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train{40, 32, 0.05, 0.9, 0, true};
  AttackConfig attack;
  DefenseConfig defense_defaults;
  double lp_learning_rate = 0.3;
  EvalConfig eval;

  std::vector<TriggerKind> triggers{TriggerKind::Patch};
  std::vector<double> rates{0.01};
  std::vector<double> tune_fractions{0.02};
  std::vector<DefenseConfig> defenses;  // seed filled per cell
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds{0};

  std::vector<Cell> cells() const;
  ModelSpec model_spec(const Shape& sample, std::size_t classes) const;
};

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string Cell::attack_key() const {
  return std::string(to_string(trigger)) + "/rate=" + format_number(rate) +
         "/tune=" + format_number(tune_fraction) + "/seed=" + std::to_string(seed);
}

inline std::vector<Cell> ExperimentPlan::cells() const {
  std::vector<Cell> out;
  for (TriggerKind t : triggers)
    for (double r : rates)
      for (double tf : tune_fractions)
        for (std::uint64_t s : seeds)
          for (const DefenseConfig& d : defenses) {
            std::vector<double> as{d.alpha};
            if (d.kind == DefenseKind::FST && !alphas.empty()) as = alphas;
            for (double a : as) {
              Cell c;
              c.index = out.size();
              c.trigger = t;
              c.rate = r;
              c.tune_fraction = tf;
              c.seed = s;
              c.defense = d;
              c.defense.alpha = a;
              c.defense.seed = s;
              out.push_back(c);
            }
          }
  return out;
}

inline ModelSpec ExperimentPlan::model_spec(const Shape& sample, std::size_t classes) const {
  if (model.kind == "conv") return ModelSpec::conv(sample, model.channels, model.hidden, classes);
  return ModelSpec::mlp(sample, model.hidden, classes, model.head_hidden);
}

// ---------------------------------------------------------------------------
// Strict reader: every key must be consumed, types are checked, and errors
// name the full key path.

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail_type(path_, "object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(j_.at(key), at(key));
  }

  const json& child(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string at(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) {
        throw ConfigError("config.unknown_key", "unknown key '" + at(k) + "'");
      }
    }
  }

  [[noreturn]] static void fail_type(const std::string& path, const char* expected) {
    throw ConfigError("config.type", "key '" + path + "' must be " + expected);
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail_type(path, "a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail_type(path, "a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) fail_type(path, "a number");
      return v.get<double>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                     v.get<std::int64_t>() < 0)) {
        fail_type(path, "a non-negative integer");
      }
      return static_cast<T>(v.get<std::uint64_t>());
    } else {
      if (!v.is_array()) fail_type(path, "an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

[[noreturn]] inline void fail_value(const std::string& path, const std::string& what) {
  throw ConfigError("config.value", "key '" + path + "': " + what);
}

inline TriggerKind trigger_from_string(const std::string& s, const std::string& path) {
  if (s == "patch") return TriggerKind::Patch;
  if (s == "blended") return TriggerKind::Blended;
  fail_value(path, "unknown trigger '" + s + "' (expected patch or blended)");
}

inline DefenseConfig read_defense(Reader& r, DefenseConfig d, double lp_lr) {
  d.kind = [&] {
    const std::string path = r.at("kind");
    const std::string k = r.get<std::string>("kind", "");
    try {
      return defense_kind_from_string(k);
    } catch (const InputError&) {
      fail_value(path, "unknown defense '" + k + "'");
    }
  }();
  if (d.kind == DefenseKind::LP) d.learning_rate = lp_lr;
  d.learning_rate = r.get<double>("learningRate", d.learning_rate);
  d.epochs = r.get<std::size_t>("epochs", d.epochs);
  d.batch_size = r.get<std::size_t>("batchSize", d.batch_size);
  d.momentum = r.get<double>("momentum", d.momentum);
  d.alpha = r.get<double>("alpha", d.alpha);
  d.rho = r.get<double>("rho", d.rho);
  d.projection = r.get<bool>("projection", d.projection);
  d.whole_head = r.get<bool>("wholeHead", d.whole_head);
  d.lp_reinit = r.get<bool>("lpReinit", d.lp_reinit);
  r.finish();
  return d;
}

template <class T>
void require_nonempty(const std::vector<T>& v, const std::string& key) {
  if (v.empty()) throw ConfigError("config.empty_grid", "grid '" + key + "' must be nonempty");
}

}  // namespace detail

inline ExperimentPlan parse_config_json(const json& root) {
  using detail::Reader;
  using detail::fail_value;
  ExperimentPlan p;
  Reader r(root, "");
  const std::string schema = r.get<std::string>("schema", kConfigSchema);
  if (schema != kConfigSchema) {
    throw ConfigError("config.schema", "unsupported schema '" + schema + "' (expected " +
                                           kConfigSchema + ")");
  }
  p.name = r.get<std::string>("name", p.name);
  p.output = r.get<std::string>("output", p.output);

  if (r.has("dataset")) {
    Reader d(r.child("dataset"), "dataset");
    auto& ds = p.dataset;
    ds.kind = d.get<std::string>("kind", ds.kind);
    ds.classes = d.get<std::size_t>("classes", ds.classes);
    if (ds.kind == "synthetic") {
      auto& s = ds.synthetic;
      s.per_class = d.get<std::size_t>("perClass", s.per_class);
      ds.test_per_class = d.get<std::size_t>("testPerClass", ds.test_per_class);
      s.height = d.get<std::size_t>("height", s.height);
      s.width = d.get<std::size_t>("width", s.width);
      s.channels = d.get<std::size_t>("channels", s.channels);
      s.noise_sigma = d.get<double>("noiseSigma", s.noise_sigma);
      s.grid = d.get<std::size_t>("grid", s.grid);
      s.contrast = d.get<double>("contrast", s.contrast);
      if (s.height < 8 || s.width < 8) fail_value("dataset.height", "images must be at least 8x8");
      if (s.noise_sigma < 0.0) fail_value("dataset.noiseSigma", "must be non-negative");
      if (s.per_class < 1 || ds.test_per_class < 1) fail_value("dataset.perClass", "must be positive");
    } else if (ds.kind == "idx") {
      ds.train_images = d.get<std::string>("trainImages", "");
      ds.train_labels = d.get<std::string>("trainLabels", "");
      ds.test_images = d.get<std::string>("testImages", "");
      ds.test_labels = d.get<std::string>("testLabels", "");
      for (const char* k : {"trainImages", "trainLabels", "testImages", "testLabels"}) {
        if (!d.has(k)) throw ConfigError("config.missing_key", "key 'dataset." + std::string(k) + "' is required for idx datasets");
      }
    } else {
      fail_value("dataset.kind", "expected synthetic or idx");
    }
    if (ds.classes < 2) fail_value("dataset.classes", "need at least 2 classes");
    ds.synthetic.classes = ds.classes;
    d.finish();
  }

  if (r.has("model")) {
    Reader m(r.child("model"), "model");
    p.model.kind = m.get<std::string>("kind", p.model.kind);
    if (p.model.kind != "mlp" && p.model.kind != "conv") fail_value("model.kind", "expected mlp or conv");
    p.model.hidden = m.get<std::vector<std::size_t>>("hidden", p.model.hidden);
    if (p.model.kind == "mlp") {
      p.model.head_hidden = m.get<std::vector<std::size_t>>("headHidden", p.model.head_hidden);
    } else {
      p.model.channels = m.get<std::vector<std::size_t>>("channels", p.model.channels);
    }
    m.finish();
  }

  if (r.has("train")) {
    Reader t(r.child("train"), "train");
    p.train.epochs = t.get<std::size_t>("epochs", p.train.epochs);
    p.train.batch_size = t.get<std::size_t>("batchSize", p.train.batch_size);
    p.train.learning_rate = t.get<double>("learningRate", p.train.learning_rate);
    p.train.momentum = t.get<double>("momentum", p.train.momentum);
    p.train.shuffle_each_epoch = t.get<bool>("shuffleEachEpoch", p.train.shuffle_each_epoch);
    t.finish();
    try {
      p.train.validate();
    } catch (const InputError& e) {
      throw ConfigError("config.value", std::string("train: ") + e.what());
    }
  }

  if (r.has("attack")) {
    Reader a(r.child("attack"), "attack");
    auto& at = p.attack;
    const std::string mode = a.get<std::string>("mode", to_string(at.mode));
    try {
      at.mode = poison_mode_from_string(mode);
    } catch (const InputError&) {
      fail_value("attack.mode", "unknown mode '" + mode + "'");
    }
    at.target_label = static_cast<Label>(a.get<std::size_t>("targetLabel", 0));
    at.cover_rate = a.get<double>("coverRate", at.cover_rate);
    at.patch_size = a.get<std::size_t>("patchSize", at.patch_size);
    at.patch_margin = a.get<std::size_t>("patchMargin", at.patch_margin);
    at.blend_ratio = a.get<double>("blendRatio", at.blend_ratio);
    at.insertion_threshold = a.get<double>("insertionThreshold", at.insertion_threshold);
    a.finish();
    if (static_cast<std::size_t>(at.target_label) >= p.dataset.classes) {
      fail_value("attack.targetLabel", "must be below classes");
    }
    if (!(at.blend_ratio > 0.0 && at.blend_ratio < 1.0)) fail_value("attack.blendRatio", "must lie in (0, 1)");
    if (at.patch_size < 1) fail_value("attack.patchSize", "must be positive");
  }

  if (r.has("defense")) {
    Reader d(r.child("defense"), "defense");
    auto& dd = p.defense_defaults;
    dd.learning_rate = d.get<double>("learningRate", dd.learning_rate);
    p.lp_learning_rate = d.get<double>("lpLearningRate", p.lp_learning_rate);
    dd.epochs = d.get<std::size_t>("epochs", dd.epochs);
    dd.batch_size = d.get<std::size_t>("batchSize", dd.batch_size);
    dd.momentum = d.get<double>("momentum", dd.momentum);
    dd.alpha = d.get<double>("alpha", dd.alpha);
    dd.rho = d.get<double>("rho", dd.rho);
    dd.projection = d.get<bool>("projection", dd.projection);
    dd.whole_head = d.get<bool>("wholeHead", dd.whole_head);
    dd.lp_reinit = d.get<bool>("lpReinit", dd.lp_reinit);
    d.finish();
  }

  if (r.has("eval")) {
    Reader e(r.child("eval"), "eval");
    p.eval.separation_samples = e.get<std::size_t>("separationSamples", p.eval.separation_samples);
    p.eval.trace_metrics = e.get<bool>("traceMetrics", p.eval.trace_metrics);
    p.eval.clean_baseline = e.get<bool>("cleanBaseline", p.eval.clean_baseline);
    e.finish();
    if (p.eval.separation_samples < 2) fail_value("eval.separationSamples", "must be at least 2");
  }

  // Grid axes.
  if (r.has("triggers")) {
    const auto names = r.get<std::vector<std::string>>("triggers", {});
    p.triggers.clear();
    for (std::size_t i = 0; i < names.size(); ++i) {
      p.triggers.push_back(detail::trigger_from_string(names[i], "triggers[" + std::to_string(i) + "]"));
    }
  }
  p.rates = r.get<std::vector<double>>("rates", p.rates);
  p.tune_fractions = r.get<std::vector<double>>("tuneFractions", p.tune_fractions);
  p.alphas = r.get<std::vector<double>>("alphas", p.alphas);
  p.seeds = r.get<std::vector<std::uint64_t>>("seeds", p.seeds);

  auto with_kind = [&](DefenseKind k) {
    DefenseConfig d = p.defense_defaults;
    d.kind = k;
    if (k == DefenseKind::LP) d.learning_rate = p.lp_learning_rate;
    return d;
  };
  if (r.has("defenses")) {
    const json& list = r.child("defenses");
    if (!list.is_array()) Reader::fail_type("defenses", "an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = "defenses[" + std::to_string(i) + "]";
      if (list[i].is_string()) {
        try {
          p.defenses.push_back(with_kind(defense_kind_from_string(list[i].get<std::string>())));
        } catch (const InputError&) {
          fail_value(path, "unknown defense '" + list[i].get<std::string>() + "'");
        }
      } else {
        Reader dr(list[i], path);
        if (!dr.has("kind")) throw ConfigError("config.missing_key", "key '" + path + ".kind' is required");
        p.defenses.push_back(detail::read_defense(dr, p.defense_defaults, p.lp_learning_rate));
      }
    }
  } else {
    p.defenses.push_back(with_kind(DefenseKind::FST));
  }
  r.finish();

  detail::require_nonempty(p.triggers, "triggers");
  detail::require_nonempty(p.rates, "rates");
  detail::require_nonempty(p.tune_fractions, "tuneFractions");
  detail::require_nonempty(p.defenses, "defenses");
  detail::require_nonempty(p.seeds, "seeds");
  for (std::size_t i = 0; i < p.rates.size(); ++i) {
    if (!(p.rates[i] >= 0.0 && p.rates[i] + p.attack.cover_rate < 1.0)) {
      fail_value("rates[" + std::to_string(i) + "]", "rate + coverRate must lie in [0, 1)");
    }
  }
  for (std::size_t i = 0; i < p.tune_fractions.size(); ++i) {
    if (!(p.tune_fractions[i] > 0.0 && p.tune_fractions[i] < 0.5)) {
      fail_value("tuneFractions[" + std::to_string(i) + "]", "must lie in (0, 0.5)");
    }
  }
  for (std::size_t i = 0; i < p.alphas.size(); ++i) {
    if (p.alphas[i] < 0.0) fail_value("alphas[" + std::to_string(i) + "]", "must be non-negative");
  }
  for (std::size_t i = 0; i < p.defenses.size(); ++i) {
    try {
      p.defenses[i].validate();
    } catch (const InputError& e) {
      fail_value("defenses[" + std::to_string(i) + "]", e.what());
    }
  }
  return p;
}

inline ExperimentPlan parse_config(const std::filesystem::path& path) {
  return parse_config_json(parse_json_file(path));
}

inline json defense_to_json(const DefenseConfig& d) {
  return {{"kind", to_string(d.kind)}, {"learningRate", d.learning_rate},
          {"epochs", d.epochs},         {"batchSize", d.batch_size},
          {"momentum", d.momentum},     {"alpha", d.alpha},
          {"rho", d.rho},               {"projection", d.projection},
          {"wholeHead", d.whole_head},  {"lpReinit", d.lp_reinit}};
}

// Fully expanded config; parse_config_json(plan_to_json(p)) reproduces p.
inline json plan_to_json(const ExperimentPlan& p) {
  json ds = {{"kind", p.dataset.kind}, {"classes", p.dataset.classes}};
  if (p.dataset.kind == "synthetic") {
    const auto& s = p.dataset.synthetic;
    ds["perClass"] = s.per_class;
    ds["testPerClass"] = p.dataset.test_per_class;
    ds["height"] = s.height;
    ds["width"] = s.width;
    ds["channels"] = s.channels;
    ds["noiseSigma"] = s.noise_sigma;
    ds["grid"] = s.grid;
    ds["contrast"] = s.contrast;
  } else {
    ds["trainImages"] = p.dataset.train_images;
    ds["trainLabels"] = p.dataset.train_labels;
    ds["testImages"] = p.dataset.test_images;
    ds["testLabels"] = p.dataset.test_labels;
  }
  json model = {{"kind", p.model.kind}, {"hidden", p.model.hidden}};
  if (p.model.kind == "mlp") {
    model["headHidden"] = p.model.head_hidden;
  } else {
    model["channels"] = p.model.channels;
  }
  const auto& dd = p.defense_defaults;
  json triggers = json::array(), defenses = json::array();
  for (TriggerKind t : p.triggers) triggers.push_back(to_string(t));
  for (const auto& d : p.defenses) defenses.push_back(defense_to_json(d));
  return {
      {"schema", kConfigSchema},
      {"name", p.name},
      {"output", p.output},
      {"dataset", ds},
      {"model", model},
      {"train",
       {{"epochs", p.train.epochs},
        {"batchSize", p.train.batch_size},
        {"learningRate", p.train.learning_rate},
        {"momentum", p.train.momentum},
        {"shuffleEachEpoch", p.train.shuffle_each_epoch}}},
      {"attack",
       {{"mode", to_string(p.attack.mode)},
        {"targetLabel", p.attack.target_label},
        {"coverRate", p.attack.cover_rate},
        {"patchSize", p.attack.patch_size},
        {"patchMargin", p.attack.patch_margin},
        {"blendRatio", p.attack.blend_ratio},
        {"insertionThreshold", p.attack.insertion_threshold}}},
      {"defense",
       {{"learningRate", dd.learning_rate},
        {"lpLearningRate", p.lp_learning_rate},
        {"epochs", dd.epochs},
        {"batchSize", dd.batch_size},
        {"momentum", dd.momentum},
        {"alpha", dd.alpha},
        {"rho", dd.rho},
        {"projection", dd.projection},
        {"wholeHead", dd.whole_head},
        {"lpReinit", dd.lp_reinit}}},
      {"eval",
       {{"separationSamples", p.eval.separation_samples},
        {"traceMetrics", p.eval.trace_metrics},
        {"cleanBaseline", p.eval.clean_baseline}}},
      {"triggers", triggers},
      {"rates", p.rates},
      {"tuneFractions", p.tune_fractions},
      {"defenses", defenses},
      {"alphas", p.alphas},
      {"seeds", p.seeds},
  };
}

inline json cell_to_json(const Cell& c) {
  json d = defense_to_json(c.defense);
  d["seed"] = c.defense.seed;
  return {{"index", c.index},     {"id", c.id()},
          {"trigger", to_string(c.trigger)},
          {"rate", c.rate},       {"tuneFraction", c.tune_fraction},
          {"seed", c.seed},       {"defense", d}};
}

// FNV-1a over the cell plus every plan section that shapes its outcome.
inline std::string config_hash(const ExperimentPlan& p, const Cell& c) {
  json shared = plan_to_json(p);
  for (const char* k : {"name", "output", "triggers", "rates", "tuneFractions", "defenses",
                        "alphas", "seeds"}) {
    shared.erase(k);
  }
  json cell = cell_to_json(c);
  cell.erase("index");
  const std::string text = json{{"cell", cell}, {"shared", shared}}.dump();
  const std::uint64_t h = fnv1a(text.data(), text.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fstlab
