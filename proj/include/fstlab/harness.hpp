#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "fstlab/checkpoint.hpp"
#include "fstlab/config.hpp"
#include "fstlab/dataset.hpp"
#include "fstlab/defense.hpp"
#include "fstlab/metrics.hpp"
#include "fstlab/poison.hpp"
#include "fstlab/train.hpp"

namespace fstlab {

inline constexpr const char* kResultsFormat = "fstlab-results-v1";

// ---------------------------------------------------------------------------
// Data and attack preparation

struct DataBundle {
  ImageDataset train;
  ImageDataset test;
};

inline DataBundle load_data(const ExperimentPlan& p, std::uint64_t seed) {
  const auto& ds = p.dataset;
  if (ds.kind == "idx") {
    DataBundle b{load_idx(ds.train_images, ds.train_labels, ds.classes),
                 load_idx(ds.test_images, ds.test_labels, ds.classes)};
    b.train.name = "idx-train";
    b.test.name = "idx-test";
    return b;
  }
  Rng rng(seed, stream::kData);
  const auto templates = synthetic_templates(ds.synthetic, rng);
  SyntheticSpec test_spec = ds.synthetic;
  test_spec.per_class = ds.test_per_class;
  DataBundle b;
  b.train = gen_synthetic(ds.synthetic, templates, rng, "synthetic-train");
  b.test = gen_synthetic(test_spec, templates, rng, "synthetic-test");
  return b;
}

inline TriggerSpec make_trigger(const AttackConfig& a, TriggerKind kind, const Shape& sample,
                                std::uint64_t seed) {
  if (kind == TriggerKind::Patch) {
    return TriggerSpec::checkerboard(a.patch_size, sample.at(2), a.patch_margin);
  }
  Rng rng(seed, stream::kTrigger);
  return TriggerSpec::blended(sample.at(0), sample.at(1), sample.at(2), a.blend_ratio, rng);
}

inline PoisonSpec make_poison_spec(const AttackConfig& a, double rate) {
  PoisonSpec ps;
  ps.rate = rate;
  ps.target_label = a.target_label;
  ps.mode = a.mode;
  ps.cover_rate = a.mode == PoisonMode::Adaptive ? a.cover_rate : 0.0;
  return ps;
}

// Everything a defense cell needs that does not depend on the defense.
struct AttackContext {
  ImageDataset test;
  TriggerSpec trigger;
  AttackEvalSet attack_eval;
  TuneSplit split;
  BackdooredModel backdoored;
  std::optional<RateCount> clean_baseline;
  ImageDataset sep_clean;      // clean target-class test samples
  ImageDataset sep_triggered;  // triggered non-target test samples
  SeparationReport sep_before;
  double seconds = 0.0;
};

inline std::vector<std::size_t> first_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Builds data, trigger and tuning split for the cell, then trains the
// backdoored model, or adopts `pretrained` in its place.
inline AttackContext prepare_attack(const ExperimentPlan& p, const Cell& c,
                                    const ModelSplit* pretrained = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  DataBundle data = load_data(p, c.seed);
  AttackContext ctx{std::move(data.test), {}, {}, split_tune(data.train, {c.tune_fraction, c.seed}),
                    {}, {}, {}, {}, {}, 0.0};
  ctx.trigger = make_trigger(p.attack, c.trigger, ctx.test.sample_shape(), c.seed);
  ctx.attack_eval = make_attack_eval_set(ctx.test, ctx.trigger, p.attack.target_label);

  const ModelSpec spec = p.model_spec(ctx.test.sample_shape(), ctx.test.class_count);
  TrainConfig tc = p.train;
  tc.seed = c.seed;
  Rng poison_rng(c.seed, stream::kPoison);
  AttackEval eval{&ctx.test, &ctx.attack_eval, p.attack.insertion_threshold};
  if (pretrained) {
    ctx.backdoored.model = *pretrained;
    ctx.backdoored.meta.trigger = ctx.trigger;
    ctx.backdoored.meta.poison = make_poison_spec(p.attack, c.rate);
    ctx.backdoored.meta.dataset_name = ctx.split.remainder.name;
    ctx.backdoored.meta.train = tc;
    ctx.backdoored.meta.metrics = evaluate(*pretrained, ctx.test, ctx.attack_eval);
    ctx.backdoored.meta.attack_failed = ctx.backdoored.meta.metrics.asr() < eval.insertion_threshold;
  } else {
    ctx.backdoored = train_backdoored(ctx.split.remainder, make_poison_spec(p.attack, c.rate),
                                      ctx.trigger, spec, tc, poison_rng, eval);
  }
  if (p.eval.clean_baseline && !pretrained) {
    TrainResult clean = train_model(ctx.split.remainder, spec, tc);
    ctx.clean_baseline = clean_accuracy(clean.model, ctx.test);
  }

  const auto target_idx = ctx.test.indices_of_class(p.attack.target_label);
  const std::size_t n_clean = std::min(target_idx.size(), p.eval.separation_samples);
  const std::size_t n_trig = std::min(ctx.attack_eval.dataset.size(), p.eval.separation_samples);
  ctx.sep_clean = ctx.test.subset(std::span(target_idx).subspan(0, n_clean), "separation-clean");
  ctx.sep_triggered = ctx.attack_eval.dataset.subset(first_n(n_trig), "separation-triggered");
  ctx.sep_before = feature_separation(ctx.backdoored.model, ctx.sep_clean, ctx.sep_triggered);
  ctx.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return ctx;
}

// ---------------------------------------------------------------------------
// Records

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json rate_to_json(const RateCount& r) {
  return {{"fraction", r.fraction}, {"hits", r.hits}, {"evaluated", r.evaluated}};
}

inline json metrics_to_json(const MetricsReport& m) {
  return {{"cAcc", m.c_acc()}, {"asr", m.asr()},
          {"clean", rate_to_json(m.clean)}, {"attack", rate_to_json(m.attack)}};
}

inline json separation_to_json(const SeparationReport& s) {
  return {{"interCentroidDistance", number_or_null(s.inter_centroid_distance)},
          {"meanIntraSpread", number_or_null(s.mean_intra_spread)},
          {"separationRatio", number_or_null(s.separation_ratio)},
          {"silhouette", number_or_null(s.silhouette)}};
}

inline json trigger_to_json(const TriggerSpec& t) {
  return {{"kind", to_string(t.kind)},
          {"margin", t.margin},
          {"blendRatio", t.blend_ratio},
          {"patternShape", t.pattern.shape()},
          {"patternChecksum", std::to_string(checksum(t.pattern))}};
}

inline json attack_meta_to_json(const AttackMeta& m) {
  return {{"mode", to_string(m.poison.mode)},
          {"rate", m.poison.rate},
          {"coverRate", m.poison.cover_rate},
          {"targetLabel", m.poison.target_label},
          {"trigger", trigger_to_json(m.trigger)},
          {"datasetName", m.dataset_name},
          {"train",
           {{"epochs", m.train.epochs},
            {"batchSize", m.train.batch_size},
            {"learningRate", m.train.learning_rate},
            {"momentum", m.train.momentum},
            {"seed", m.train.seed},
            {"shuffleEachEpoch", m.train.shuffle_each_epoch}}},
          {"poisonedCount", m.poisoned_count},
          {"coverCount", m.cover_count},
          {"metrics", metrics_to_json(m.metrics)},
          {"attackFailed", m.attack_failed}};
}

inline json trace_to_json(const std::vector<DefenseEpoch>& trace) {
  json out = json::array();
  for (const auto& e : trace) {
    json j = {{"epoch", e.epoch},
              {"loss", number_or_null(e.loss)},
              {"innerProduct", e.inner_product},
              {"penalty", e.penalty},
              {"headNorm", e.head_norm}};
    if (e.c_acc) j["cAcc"] = *e.c_acc;
    if (e.asr) j["asr"] = *e.asr;
    out.push_back(j);
  }
  return out;
}

inline double max_projection_error(const DefenseResult& r) {
  double worst = 0.0;
  for (double n : r.step_head_norms) {
    worst = std::max(worst, std::abs(n - r.head_norm_target) / r.head_norm_target);
  }
  return worst;
}

struct CellTiming {
  std::size_t index = 0;
  double attack_seconds = 0.0;
  double defense_seconds = 0.0;
};

inline json failed_record(const ExperimentPlan& p, const Cell& c, const std::string& code,
                          const std::string& message) {
  return {{"cell", cell_to_json(c)},
          {"configHash", config_hash(p, c)},
          {"status", "failed"},
          {"error", {{"code", code}, {"message", message}}}};
}

// Defense stage of one cell, given its prepared attack.
inline json run_defense_cell(const ExperimentPlan& p, const Cell& c, const AttackContext& ctx,
                             CellTiming* timing = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  json rec;
  try {
    DefenseMonitor mon;
    if (p.eval.trace_metrics) mon = {&ctx.test, &ctx.attack_eval};
    DefenseResult r = run_defense(ctx.backdoored.model, ctx.split.tune, c.defense, mon);
    const MetricsReport after = evaluate(r.model, ctx.test, ctx.attack_eval);
    const SeparationReport sep_after = feature_separation(r.model, ctx.sep_clean, ctx.sep_triggered);

    json before = metrics_to_json(ctx.backdoored.meta.metrics);
    before["separation"] = separation_to_json(ctx.sep_before);
    json after_j = metrics_to_json(after);
    after_j["separation"] = separation_to_json(sep_after);

    rec = {{"cell", cell_to_json(c)},
           {"configHash", config_hash(p, c)},
           {"status", "ok"},
           {"attack", attack_meta_to_json(ctx.backdoored.meta)},
           {"tuneSize", ctx.split.tune.size()},
           {"before", before},
           {"after", after_j},
           {"trace", trace_to_json(r.trace)},
           {"steps", r.steps},
           {"headNormTarget", r.head_norm_target},
           {"maxProjectionError", max_projection_error(r)}};
    if (ctx.clean_baseline) rec["cleanBaseline"] = rate_to_json(*ctx.clean_baseline);
  } catch (const Error& e) {
    rec = failed_record(p, c, e.code(), e.what());
  } catch (const std::exception& e) {
    rec = failed_record(p, c, "internal", e.what());
  }
  if (timing) {
    timing->index = c.index;
    timing->attack_seconds = ctx.seconds;
    timing->defense_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return rec;
}

// poison -> train_backdoored -> defend -> evaluate for a single cell.
// Failures are captured in the record, never thrown.
inline json run_experiment(const ExperimentPlan& p, const Cell& c, CellTiming* timing = nullptr) {
  std::optional<AttackContext> ctx;
  try {
    ctx = prepare_attack(p, c);
  } catch (const Error& e) {
    if (timing) *timing = {c.index, 0.0, 0.0};
    return failed_record(p, c, e.code(), e.what());
  } catch (const std::exception& e) {
    if (timing) *timing = {c.index, 0.0, 0.0};
    return failed_record(p, c, "internal", e.what());
  }
  return run_defense_cell(p, c, *ctx, timing);
}

// ---------------------------------------------------------------------------
// Sweeps

struct ExperimentResult {
  json plan;
  std::vector<json> records;  // sorted by cell index
  std::vector<CellTiming> timing;
  double total_seconds = 0.0;
};

struct SweepOptions {
  std::size_t parallelism = 1;
  // Execution order of attack groups; results do not depend on it.
  std::vector<std::size_t> group_order;
  std::function<void(const std::string&)> log;
};

// Cells sharing (trigger, rate, tuneFraction, seed) share one backdoored
// model; each group is an independent task.
inline std::vector<std::vector<Cell>> group_cells(const std::vector<Cell>& cells) {
  std::vector<std::vector<Cell>> groups;
  std::map<std::string, std::size_t> at;
  for (const Cell& c : cells) {
    auto [it, fresh] = at.emplace(c.attack_key(), groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(c);
  }
  return groups;
}

inline ExperimentResult run_sweep(const ExperimentPlan& p, const SweepOptions& opt = {}) {
  if (opt.parallelism < 1) throw InputError("sweep.parallel", "parallelism must be at least 1");
  const auto t0 = std::chrono::steady_clock::now();
  const auto cells = p.cells();
  const auto groups = group_cells(cells);
  std::vector<std::size_t> order = opt.group_order;
  if (order.empty()) order = first_n(groups.size());
  if (order.size() != groups.size()) {
    throw InputError("sweep.order", "group order must list every group once");
  }

  ExperimentResult res;
  res.plan = plan_to_json(p);
  res.records.resize(cells.size());
  res.timing.resize(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;

  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= order.size()) return;
      const auto& group = groups.at(order[k]);
      std::optional<AttackContext> ctx;
      std::string code, message;
      try {
        ctx = prepare_attack(p, group.front());
      } catch (const Error& e) {
        code = e.code();
        message = e.what();
      } catch (const std::exception& e) {
        code = "internal";
        message = e.what();
      }
      for (const Cell& c : group) {
        if (ctx) {
          res.records[c.index] = run_defense_cell(p, c, *ctx, &res.timing[c.index]);
        } else {
          res.records[c.index] = failed_record(p, c, code, message);
          res.timing[c.index] = {c.index, 0.0, 0.0};
        }
        if (opt.log) {
          std::lock_guard lock(log_mu);
          const json& r = res.records[c.index];
          std::string line = "[" + std::to_string(c.index + 1) + "/" +
                             std::to_string(cells.size()) + "] " + c.id();
          if (r["status"] == "ok") {
            char buf[160];
            std::snprintf(buf, sizeof buf, " asr %.3f -> %.3f, c-acc %.3f -> %.3f",
                          r["before"]["asr"].get<double>(), r["after"]["asr"].get<double>(),
                          r["before"]["cAcc"].get<double>(), r["after"]["cAcc"].get<double>());
            line += buf;
          } else {
            line += " FAILED " + r["error"]["code"].get<std::string>();
          }
          opt.log(line);
        }
      }
    }
  };
  const std::size_t n_threads = std::min(opt.parallelism, std::max<std::size_t>(groups.size(), 1));
  std::vector<std::thread> threads;
  for (std::size_t i = 1; i < n_threads; ++i) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  res.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// Summary: mean metrics per defense label plus the two readings of "average
// standard deviation of ASR" (across seeds within an attack setting, and
// across attack settings for a fixed seed).

namespace detail {

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double population_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace detail

inline json summarize(const std::vector<json>& records) {
  struct Acc {
    std::vector<double> cacc, asr;
    std::map<std::string, std::vector<double>> by_setting;        // across seeds
    std::map<std::uint64_t, std::vector<double>> by_seed;         // across settings
    std::size_t failed = 0;
  };
  std::map<std::string, Acc> acc;
  std::vector<std::string> labels;
  for (const json& r : records) {
    const json& cell = r.at("cell");
    const std::string id = cell.at("id").get<std::string>();
    const std::string label = id.substr(id.rfind('/') + 1);
    if (!acc.count(label)) labels.push_back(label);
    Acc& a = acc[label];
    if (r.at("status") != "ok") {
      ++a.failed;
      continue;
    }
    const double asr = r["after"]["asr"].get<double>();
    a.cacc.push_back(r["after"]["cAcc"].get<double>());
    a.asr.push_back(asr);
    const std::string setting = cell["trigger"].get<std::string>() + "/" +
                                format_number(cell["rate"].get<double>()) + "/" +
                                format_number(cell["tuneFraction"].get<double>());
    a.by_setting[setting].push_back(asr);
    a.by_seed[cell["seed"].get<std::uint64_t>()].push_back(asr);
  }
  json out = json::array();
  for (const auto& label : labels) {
    const Acc& a = acc[label];
    std::vector<double> s1, s2;
    for (const auto& [k, v] : a.by_setting) s1.push_back(detail::population_std(v));
    for (const auto& [k, v] : a.by_seed) s2.push_back(detail::population_std(v));
    out.push_back({{"defense", label},
                   {"cells", a.asr.size()},
                   {"failed", a.failed},
                   {"meanCAcc", detail::mean(a.cacc)},
                   {"meanAsr", detail::mean(a.asr)},
                   {"asrStdAcrossSeeds", detail::mean(s1)},
                   {"asrStdAcrossAttacks", detail::mean(s2)}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline json result_to_json(const ExperimentResult& r, bool with_timing = true) {
  json j = {{"format", kResultsFormat},
            {"plan", r.plan},
            {"records", r.records},
            {"summary", summarize(r.records)}};
  if (with_timing) {
    json cells = json::array();
    for (const auto& t : r.timing) {
      cells.push_back({{"index", t.index},
                       {"attackSeconds", t.attack_seconds},
                       {"defenseSeconds", t.defense_seconds}});
    }
    j["timing"] = {{"totalSeconds", r.total_seconds}, {"cells", cells}};
  }
  return j;
}

inline std::string format_csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kCsvHeader =
    "attack,trigger,rate,defense,seed,cacc_before,asr_before,cacc_after,asr_after,"
    "sep_before,sep_after,epochs,wallclock_s";

inline std::string results_csv(const ExperimentResult& r) {
  std::string out = std::string(kCsvHeader) + "\n";
  auto num = [](const json& v) {
    return v.is_number() ? format_csv_number(v.get<double>()) : std::string();
  };
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const json& rec = r.records[i];
    const json& cell = rec.at("cell");
    const std::string id = cell.at("id").get<std::string>();
    const bool ok = rec.at("status") == "ok";
    const std::string mode = r.plan.at("attack").at("mode").get<std::string>();
    out += mode + "," + cell["trigger"].get<std::string>() + "," +
           format_csv_number(cell["rate"].get<double>()) + "," + id.substr(id.rfind('/') + 1) +
           "," + std::to_string(cell["seed"].get<std::uint64_t>()) + ",";
    if (ok) {
      out += num(rec["before"]["cAcc"]) + "," + num(rec["before"]["asr"]) + "," +
             num(rec["after"]["cAcc"]) + "," + num(rec["after"]["asr"]) + "," +
             num(rec["before"]["separation"]["separationRatio"]) + "," +
             num(rec["after"]["separation"]["separationRatio"]) + ",";
    } else {
      out += ",,,,,,";
    }
    const double wall = i < r.timing.size()
                            ? r.timing[i].attack_seconds + r.timing[i].defense_seconds
                            : 0.0;
    out += std::to_string(cell["defense"]["epochs"].get<std::size_t>()) + "," +
           format_csv_number(wall) + "\n";
  }
  return out;
}

inline void write_results(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
  write_text(dir / "results.json", result_to_json(r).dump(2) + "\n");
  write_text(dir / "results.csv", results_csv(r));
}

inline ExperimentResult result_from_json(const json& j) {
  if (j.value("format", "") != kResultsFormat) {
    throw ParseError("results.format", std::string("expected format ") + kResultsFormat);
  }
  ExperimentResult r;
  r.plan = j.at("plan");
  for (const auto& rec : j.at("records")) r.records.push_back(rec);
  if (j.contains("timing")) {
    r.total_seconds = j["timing"].at("totalSeconds").get<double>();
    for (const auto& t : j["timing"].at("cells")) {
      r.timing.push_back({t.at("index").get<std::size_t>(), t.at("attackSeconds").get<double>(),
                          t.at("defenseSeconds").get<double>()});
    }
  }
  return r;
}

inline ExperimentResult read_results(const std::filesystem::path& dir) {
  return result_from_json(parse_json_file(dir / "results.json"));
}

// ---------------------------------------------------------------------------
// Replay: re-run one stored record from its stored plan and compare.

struct ReplayOutcome {
  std::size_t index = 0;
  bool match = false;
  std::string stored;
  std::string replayed;
};

inline ReplayOutcome replay(const ExperimentResult& r, std::size_t index) {
  const ExperimentPlan plan = parse_config_json(r.plan);
  const auto cells = plan.cells();
  if (index >= cells.size() || index >= r.records.size()) {
    throw InputError("replay.index", "no record " + std::to_string(index));
  }
  const Cell& c = cells[index];
  const json& stored = r.records[index];
  if (stored.at("configHash").get<std::string>() != config_hash(plan, c)) {
    throw InputError("replay.hash", "record " + std::to_string(index) +
                                        " does not match its plan cell");
  }
  ReplayOutcome out;
  out.index = index;
  out.stored = stored.dump();
  out.replayed = run_experiment(plan, c).dump();
  out.match = out.stored == out.replayed;
  return out;
}

// ---------------------------------------------------------------------------
// Plot data

namespace detail {

inline std::string join_row(const std::vector<std::string>& cols) {
  std::string s;
  for (std::size_t i = 0; i < cols.size(); ++i) s += (i ? "," : "") + cols[i];
  return s + "\n";
}

inline std::string slug(std::string s) {
  for (char& ch : s) {
    if (ch == '/' || ch == '=' || ch == '(' || ch == ')' || ch == ';' || ch == '+') ch = '_';
  }
  return s;
}

inline std::string setting_of(const json& cell) {
  return cell["trigger"].get<std::string>() + "_rate" +
         format_number(cell["rate"].get<double>());
}

inline std::string label_of(const json& cell) {
  const std::string id = cell["id"].get<std::string>();
  return id.substr(id.rfind('/') + 1);
}

}  // namespace detail

inline const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> k{"alpha-sensitivity", "epoch-curves", "tune-size",
                                          "projection-ablation"};
  return k;
}

// Writes CSVs for one plot kind into `dir` and returns their paths.
inline std::vector<std::filesystem::path> emit_plot_data(const ExperimentResult& r,
                                                         const std::string& kind,
                                                         const std::filesystem::path& dir) {
  using detail::join_row;
  const auto num = format_csv_number;
  std::vector<const json*> ok;
  for (const auto& rec : r.records) {
    if (rec.at("status") == "ok") ok.push_back(&rec);
  }
  std::map<std::string, std::string> files;  // file name -> content

  if (kind == "alpha-sensitivity") {
    // setting -> alpha -> (cAcc, asr) over seeds
    std::map<std::string, std::map<double, std::pair<std::vector<double>, std::vector<double>>>> g;
    for (const json* rec : ok) {
      const json& d = (*rec)["cell"]["defense"];
      if (d["kind"] != "FST") continue;
      auto& slot = g[detail::setting_of((*rec)["cell"]) + "_tune" +
                     format_number((*rec)["cell"]["tuneFraction"].get<double>())][d["alpha"].get<double>()];
      slot.first.push_back((*rec)["after"]["cAcc"].get<double>());
      slot.second.push_back((*rec)["after"]["asr"].get<double>());
    }
    bool any = false;
    for (const auto& [setting, by_alpha] : g) {
      if (by_alpha.size() < 2) continue;
      any = true;
      std::string csv = "alpha,seeds,cacc_mean,asr_mean,asr_std\n";
      for (const auto& [a, v] : by_alpha) {
        csv += join_row({num(a), std::to_string(v.first.size()), num(detail::mean(v.first)),
                         num(detail::mean(v.second)), num(detail::population_std(v.second))});
      }
      files["alpha-sensitivity_" + detail::slug(setting) + ".csv"] = csv;
    }
    if (!any) {
      throw InputError("plot.missing_axis",
                       "alpha-sensitivity needs an FST defense and an 'alphas' grid with at "
                       "least 2 values");
    }
  } else if (kind == "epoch-curves") {
    std::string csv = "trigger,rate,tune_fraction,seed,defense,epoch,loss,cacc,asr,head_norm,inner_product\n";
    std::size_t rows = 0;
    for (const json* rec : ok) {
      const json& cell = (*rec)["cell"];
      for (const auto& e : (*rec)["trace"]) {
        if (!e.contains("asr")) continue;
        ++rows;
        csv += join_row({cell["trigger"].get<std::string>(), num(cell["rate"].get<double>()),
                         num(cell["tuneFraction"].get<double>()),
                         std::to_string(cell["seed"].get<std::uint64_t>()), detail::label_of(cell),
                         std::to_string(e["epoch"].get<std::size_t>()),
                         e["loss"].is_number() ? num(e["loss"].get<double>()) : "",
                         num(e["cAcc"].get<double>()), num(e["asr"].get<double>()),
                         num(e["headNorm"].get<double>()), num(e["innerProduct"].get<double>())});
      }
    }
    if (rows == 0) {
      throw InputError("plot.missing_axis",
                       "epoch-curves needs per-epoch metrics (eval.traceMetrics = true)");
    }
    files["epoch-curves.csv"] = csv;
  } else if (kind == "tune-size") {
    std::map<std::string, std::map<double, std::tuple<std::vector<double>, std::vector<double>, std::size_t>>> g;
    std::set<double> fractions;
    for (const json* rec : ok) {
      const json& cell = (*rec)["cell"];
      const double tf = cell["tuneFraction"].get<double>();
      fractions.insert(tf);
      auto& slot = g[detail::setting_of(cell) + "_" + detail::label_of(cell)][tf];
      std::get<0>(slot).push_back((*rec)["after"]["cAcc"].get<double>());
      std::get<1>(slot).push_back((*rec)["after"]["asr"].get<double>());
      std::get<2>(slot) = (*rec)["tuneSize"].get<std::size_t>();
    }
    if (fractions.size() < 2) {
      throw InputError("plot.missing_axis",
                       "tune-size needs a 'tuneFractions' grid with at least 2 values");
    }
    for (const auto& [setting, by_tf] : g) {
      std::string csv = "tune_fraction,tune_size,seeds,cacc_mean,asr_mean,asr_std\n";
      for (const auto& [tf, v] : by_tf) {
        csv += join_row({num(tf), std::to_string(std::get<2>(v)),
                         std::to_string(std::get<0>(v).size()), num(detail::mean(std::get<0>(v))),
                         num(detail::mean(std::get<1>(v))),
                         num(detail::population_std(std::get<1>(v)))});
      }
      files["tune-size_" + detail::slug(setting) + ".csv"] = csv;
    }
  } else if (kind == "projection-ablation") {
    bool with = false, without = false;
    std::string csv =
        "trigger,rate,tune_fraction,seed,alpha,projection,epoch,loss,cacc,asr,head_norm,inner_product\n";
    for (const json* rec : ok) {
      const json& cell = (*rec)["cell"];
      const json& d = cell["defense"];
      if (d["kind"] != "FST") continue;
      const bool proj = d["projection"].get<bool>();
      (proj ? with : without) = true;
      for (const auto& e : (*rec)["trace"]) {
        csv += join_row({cell["trigger"].get<std::string>(), num(cell["rate"].get<double>()),
                         num(cell["tuneFraction"].get<double>()),
                         std::to_string(cell["seed"].get<std::uint64_t>()),
                         num(d["alpha"].get<double>()), proj ? "on" : "off",
                         std::to_string(e["epoch"].get<std::size_t>()),
                         e["loss"].is_number() ? num(e["loss"].get<double>()) : "",
                         e.contains("cAcc") ? num(e["cAcc"].get<double>()) : "",
                         e.contains("asr") ? num(e["asr"].get<double>()) : "",
                         num(e["headNorm"].get<double>()), num(e["innerProduct"].get<double>())});
      }
    }
    if (!with || !without) {
      throw InputError("plot.missing_axis",
                       "projection-ablation needs FST defenses with projection true and false");
    }
    files["projection-ablation.csv"] = csv;
  } else {
    std::string known;
    for (const auto& k : plot_kinds()) known += (known.empty() ? "" : ", ") + k;
    throw InputError("plot.kind", "unknown plot kind '" + kind + "' (known: " + known + ")");
  }

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
  std::vector<std::filesystem::path> out;
  for (const auto& [name, content] : files) {
    out.push_back(dir / name);
    write_text(out.back(), content);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Small exports used by the CLI

// PCA coordinates of clean target-class and triggered features.
inline std::string pca_csv(const ModelSplit& model, const ImageDataset& clean_target,
                           const ImageDataset& triggered, PcaResult* result = nullptr) {
  const Tensor fa = extract_features(model, clean_target);
  const Tensor fb = extract_features(model, triggered);
  const std::size_t d = model.feature_width();
  Tensor all({fa.dim(0) + fb.dim(0), d});
  std::copy(fa.values().begin(), fa.values().end(), all.data());
  std::copy(fb.values().begin(), fb.values().end(), all.data() + fa.size());
  PcaResult pca = pca_project(all, 2);
  std::string csv = "index,trueLabel,isBackdoor,pc1,pc2\n";
  for (std::size_t i = 0; i < all.dim(0); ++i) {
    const bool bd = i >= fa.dim(0);
    const Label y = bd ? triggered.labels[i - fa.dim(0)] : clean_target.labels[i];
    const double pc1 = pca.coords.dim(1) > 0 ? pca.coords.at(i, 0) : 0.0;
    const double pc2 = pca.coords.dim(1) > 1 ? pca.coords.at(i, 1) : 0.0;
    csv += std::to_string(i) + "," + std::to_string(y) + "," + (bd ? "1" : "0") + "," +
           format_csv_number(pc1) + "," + format_csv_number(pc2) + "\n";
  }
  if (result) *result = std::move(pca);
  return csv;
}

inline json dataset_manifest(const ImageDataset& d, std::uint64_t seed,
                             const PoisonedDataset* poisoned = nullptr,
                             const PoisonSpec* ps = nullptr) {
  json j = {{"name", d.name},
            {"classes", d.class_count},
            {"count", d.size()},
            {"shape", d.sample_shape()},
            {"seed", seed},
            {"poison", nullptr}};
  if (poisoned && ps) {
    j["poison"] = {{"mode", to_string(ps->mode)},
                   {"rate", ps->rate},
                   {"coverRate", ps->cover_rate},
                   {"targetLabel", ps->target_label},
                   {"poisonIndices", poisoned->poison_indices},
                   {"coverIndices", poisoned->cover_indices}};
  }
  return j;
}

}  // namespace fstlab
