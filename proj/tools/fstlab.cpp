// fstlab command-line front end.
//
//   fstlab gen-data  --config C --out DIR [--seed N]
//   fstlab attack    --config C --out DIR [--seed N]
//   fstlab defend    --config C --model DIR --out DIR [--seed N]
//   fstlab eval      --config C --model CKPT.json --out DIR [--seed N]
//   fstlab sweep     --config C --out DIR [--seed N] [--parallel N]
//   fstlab plot-data --out DIR [--kind K]
//   fstlab replay    --out DIR [--cell I]

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "fstlab/fstlab.hpp"

namespace fs = std::filesystem;
using namespace fstlab;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t parallel = 1;
  bool verbose = false;
};

void log(const Globals& g, const std::string& msg) {
  if (g.verbose) std::cerr << msg << "\n";
}

ExperimentPlan load_plan(const Globals& g) {
  ExperimentPlan p = g.config.empty() ? parse_config_json(json::object()) : parse_config(g.config);
  if (g.seed) {
    p.seeds = {*g.seed};
  }
  return p;
}

fs::path out_dir(const Globals& g, const ExperimentPlan* p = nullptr) {
  fs::path d = !g.out.empty() ? fs::path(g.out) : fs::path(p ? p->output : "out");
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw IoError(d.string(), "cannot create directory: " + ec.message());
  return d;
}

// The first cell of the plan fixes trigger, rate, tuning fraction and seed
// for the single-run subcommands.
Cell first_cell(const ExperimentPlan& p) { return p.cells().front(); }

void write_idx_pair(const ImageDataset& d, const fs::path& dir, const std::string& stem,
                    const json& manifest) {
  write_idx(d, (dir / (stem + "-images.idx3-ubyte")).string(),
            (dir / (stem + "-labels.idx1-ubyte")).string());
  write_text(dir / (stem + ".manifest.json"), manifest.dump(2) + "\n");
}

int cmd_gen_data(const Globals& g) {
  const ExperimentPlan p = load_plan(g);
  if (p.dataset.kind != "synthetic") {
    throw InputError("gen-data.kind", "gen-data only generates synthetic datasets");
  }
  const fs::path dir = out_dir(g, &p);
  const std::uint64_t seed = p.seeds.front();
  const DataBundle data = load_data(p, seed);
  write_idx_pair(data.train, dir, "train", dataset_manifest(data.train, seed));
  write_idx_pair(data.test, dir, "test", dataset_manifest(data.test, seed));
  std::printf("wrote %zu train / %zu test samples to %s\n", data.train.size(), data.test.size(),
              dir.string().c_str());
  return 0;
}

int cmd_attack(const Globals& g) {
  const ExperimentPlan p = load_plan(g);
  const fs::path dir = out_dir(g, &p);
  const Cell c = first_cell(p);
  log(g, "training backdoored model for " + c.attack_key());
  const AttackContext ctx = prepare_attack(p, c);

  save_checkpoint(ctx.backdoored.model, c.seed, dir / "model.json");
  json meta = attack_meta_to_json(ctx.backdoored.meta);
  meta["cell"] = cell_to_json(c);
  meta["epochLoss"] = ctx.backdoored.epoch_loss;
  meta["separation"] = separation_to_json(ctx.sep_before);
  write_text(dir / "attack.json", meta.dump(2) + "\n");

  if (ctx.split.remainder.channels() == 1) {
    Rng poison_rng(c.seed, stream::kPoison);
    const PoisonSpec ps = make_poison_spec(p.attack, c.rate);
    const PoisonedDataset poisoned = poison_dataset(ctx.split.remainder, ps, ctx.trigger, poison_rng);
    write_idx_pair(poisoned.dataset, dir, "poisoned-train",
                   dataset_manifest(poisoned.dataset, c.seed, &poisoned, &ps));
  }
  const auto& m = ctx.backdoored.meta;
  std::printf("c-acc %.4f  asr %.4f  poisoned %zu  cover %zu%s\n", m.metrics.c_acc(),
              m.metrics.asr(), m.poisoned_count, m.cover_count,
              m.attack_failed ? "  [attack-failed]" : "");
  return 0;
}

int cmd_defend(const Globals& g, const std::string& model_dir) {
  const ExperimentPlan p = load_plan(g);
  const fs::path dir = out_dir(g, &p);
  const Checkpoint ck = load_checkpoint(fs::path(model_dir) / "model.json");
  const auto cells = p.cells();
  const std::string key = cells.front().attack_key();
  const AttackContext ctx = prepare_attack(p, cells.front(), &ck.model);
  for (const Cell& c : cells) {
    if (c.attack_key() != key) continue;
    log(g, "running " + c.id());
    DefenseMonitor mon;
    if (p.eval.trace_metrics) mon = {&ctx.test, &ctx.attack_eval};
    const DefenseResult r = run_defense(ctx.backdoored.model, ctx.split.tune, c.defense, mon);
    const MetricsReport after = evaluate(r.model, ctx.test, ctx.attack_eval);
    const std::string stem = detail::slug(c.defense.label());
    save_checkpoint(r.model, c.seed, dir / (stem + ".json"));
    json out = {{"cell", cell_to_json(c)},
                {"before", metrics_to_json(ctx.backdoored.meta.metrics)},
                {"after", metrics_to_json(after)},
                {"trace", trace_to_json(r.trace)},
                {"headNormTarget", r.head_norm_target},
                {"maxProjectionError", max_projection_error(r)}};
    write_text(dir / (stem + ".trace.json"), out.dump(2) + "\n");
    std::printf("%-24s c-acc %.4f -> %.4f  asr %.4f -> %.4f\n", c.defense.label().c_str(),
                ctx.backdoored.meta.metrics.c_acc(), after.c_acc(),
                ctx.backdoored.meta.metrics.asr(), after.asr());
  }
  return 0;
}

int cmd_eval(const Globals& g, const std::string& model_path) {
  const ExperimentPlan p = load_plan(g);
  const fs::path dir = out_dir(g, &p);
  const Checkpoint ck = load_checkpoint(model_path);
  const AttackContext ctx = prepare_attack(p, first_cell(p), &ck.model);
  json out = {{"model", model_path},
              {"metrics", metrics_to_json(ctx.backdoored.meta.metrics)},
              {"separation", separation_to_json(ctx.sep_before)}};
  PcaResult pca;
  write_text(dir / "pca.csv", pca_csv(ck.model, ctx.sep_clean, ctx.sep_triggered, &pca));
  out["pca"] = {{"variances", pca.variances}, {"rankDeficient", pca.rank_deficient}};
  write_text(dir / "eval.json", out.dump(2) + "\n");
  std::printf("c-acc %.4f  asr %.4f  separation ratio %.4f  silhouette %.4f\n",
              ctx.backdoored.meta.metrics.c_acc(), ctx.backdoored.meta.metrics.asr(),
              ctx.sep_before.separation_ratio, ctx.sep_before.silhouette);
  return 0;
}

int cmd_sweep(const Globals& g) {
  const ExperimentPlan p = load_plan(g);
  const fs::path dir = out_dir(g, &p);
  SweepOptions opt;
  opt.parallelism = g.parallel;
  opt.log = [](const std::string& line) { std::cerr << line << "\n"; };
  const ExperimentResult r = run_sweep(p, opt);
  write_results(r, dir);
  std::size_t failed = 0;
  for (const auto& rec : r.records) failed += rec["status"] != "ok";
  std::printf("%zu cells (%zu failed) in %.1f s -> %s\n", r.records.size(), failed,
              r.total_seconds, dir.string().c_str());
  for (const auto& s : summarize(r.records)) {
    std::printf("  %-24s c-acc %.4f  asr %.4f\n", s["defense"].get<std::string>().c_str(),
                s["meanCAcc"].get<double>(), s["meanAsr"].get<double>());
  }
  return 0;
}

int cmd_plot_data(const Globals& g, const std::string& kind) {
  if (g.out.empty()) throw InputError("cli.out", "--out must name a results directory");
  const ExperimentResult r = read_results(g.out);
  const fs::path dir = fs::path(g.out) / "plots";
  int status = 0;
  const std::vector<std::string> kinds = kind.empty() ? plot_kinds() : std::vector{kind};
  for (const auto& k : kinds) {
    try {
      for (const auto& f : emit_plot_data(r, k, dir)) std::printf("%s\n", f.string().c_str());
    } catch (const InputError& e) {
      if (!kind.empty()) throw;
      log(g, "skipping " + k + ": " + e.what());
    }
  }
  return status;
}

int cmd_replay(const Globals& g, std::optional<std::size_t> cell) {
  if (g.out.empty()) throw InputError("cli.out", "--out must name a results directory");
  const ExperimentResult r = read_results(g.out);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    if (cell && *cell != i) continue;
    const ReplayOutcome o = replay(r, i);
    mismatches += !o.match;
    std::printf("record %zu: %s\n", i, o.match ? "identical" : "MISMATCH");
  }
  if (cell && *cell >= r.records.size()) throw InputError("replay.index", "no record " + std::to_string(*cell));
  return mismatches == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"backdoor attack and tuning-defense laboratory"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--seed", g.seed, "override the seeds grid with one seed");
  app.add_option("--parallel", g.parallel, "concurrent attack groups in a sweep")->check(CLI::PositiveNumber);
  app.add_flag("--verbose", g.verbose, "progress on stderr");

  std::string model, kind;
  std::optional<std::size_t> cell;
  auto* gen = app.add_subcommand("gen-data", "write the synthetic train/test sets as IDX");
  auto* attack = app.add_subcommand("attack", "poison, train and checkpoint a backdoored model");
  auto* defend = app.add_subcommand("defend", "run the configured defenses on a checkpoint");
  defend->add_option("--model", model, "directory written by `attack`")->required();
  auto* eval = app.add_subcommand("eval", "metrics, separability and PCA export for a checkpoint");
  eval->add_option("--model", model, "checkpoint manifest (.json)")->required();
  auto* sweep = app.add_subcommand("sweep", "run every cell of the config grid");
  auto* plot = app.add_subcommand("plot-data", "emit plot CSVs from a results directory");
  plot->add_option("--kind", kind, "alpha-sensitivity | epoch-curves | tune-size | projection-ablation");
  auto* rep = app.add_subcommand("replay", "re-run stored records and compare byte-for-byte");
  rep->add_option("--cell", cell, "record index (default: all)");
  for (auto* s : {gen, attack, defend, eval, sweep, plot, rep}) s->fallthrough();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_data(g);
    if (*attack) return cmd_attack(g);
    if (*defend) return cmd_defend(g, model);
    if (*eval) return cmd_eval(g, model);
    if (*sweep) return cmd_sweep(g);
    if (*plot) return cmd_plot_data(g, kind);
    if (*rep) return cmd_replay(g, cell);
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
