// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Criteria 4-11 share backdoored models: each attack setting is trained once
// and every defense it needs is run against that model.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "support.hpp"

using namespace fstlab;

namespace {

// Tolerances.
constexpr double kGradTol = 1e-6;
constexpr std::size_t kGradModels = 24;
constexpr double kGradSeconds = 10.0;
constexpr std::size_t kProjectionMinSteps = 500;
constexpr double kProjectionTol = 1e-9;
constexpr std::size_t kReductionMinSteps = 100;
constexpr double kInsertAsr = 0.90;
constexpr double kInsertCaccPoints = 0.02;
constexpr double kRunSeconds = 180.0;
constexpr double kVanillaAsr = 0.50;
constexpr double kVanillaCaccPoints = 0.03;
constexpr double kLpHighRateAsr = 0.05;
constexpr double kFstAsr = 0.10;
constexpr double kFstCaccDrop = 0.03;
constexpr double kAdaptivePreAsr = 0.60;
constexpr double kAdaptiveAsr = 0.15;
constexpr double kAlphaAsr = 0.10;
constexpr double kAlphaCaccRange = 0.02;
constexpr double kTuneSizeAsr = 0.15;
constexpr std::size_t kSeedsNeeded = 4;

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};
const std::vector<double> kFstRates{0.20, 0.05, 0.01, 0.005};
const std::vector<double> kAlphas{0.05, 0.1, 0.2, 0.5, 1.0};
const std::vector<double> kTuneFractions{0.001, 0.005, 0.02};
constexpr std::size_t kDefenseEpochs = 50;

// Lines are echoed to stderr as they settle and printed in order at the end.
std::map<int, std::string> verdicts;
int failures = 0;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  char head[96];
  std::snprintf(head, sizeof head, "%s  criterion %2d  %-28s ", pass ? "PASS" : "FAIL", id,
                name.c_str());
  verdicts[id] = head + detail;
  std::fprintf(stderr, "%s\n", verdicts[id].c_str());
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? NAN : s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Records of the shared toy runs

struct Row {
  std::string trigger;
  double rate = 0.0;
  double tune = 0.0;
  std::uint64_t seed = 0;
  bool adaptive = false;
  DefenseKind kind = DefenseKind::FST;
  double alpha = 0.0;
  double attack_seconds = 0.0;
  json rec;

  bool ok() const { return rec.value("status", "") == "ok"; }
  double asr_before() const { return rec["before"]["asr"].get<double>(); }
  double cacc_before() const { return rec["before"]["cAcc"].get<double>(); }
  double asr_after() const { return rec["after"]["asr"].get<double>(); }
  double cacc_after() const { return rec["after"]["cAcc"].get<double>(); }
};

struct Setting {
  std::string trigger;
  double rate;
  double tune;
  std::uint64_t seed;
  bool adaptive;
  std::vector<std::string> defenses;
  std::vector<double> alphas;
};

json setting_config(const Setting& s) {
  json cfg = {{"name", "acceptance"},
              {"defense", {{"epochs", kDefenseEpochs}}},
              {"triggers", {s.trigger}},
              {"rates", {s.rate}},
              {"tuneFractions", {s.tune}},
              {"seeds", {s.seed}},
              {"defenses", s.defenses}};
  if (!s.alphas.empty()) cfg["alphas"] = s.alphas;
  if (s.adaptive) cfg["attack"] = {{"mode", "adaptive"}, {"coverRate", 0.005}};
  return cfg;
}

struct Shared {
  std::vector<Row> rows;
  std::map<std::uint64_t, double> clean_baseline;  // seed -> C-Acc
  ExperimentResult replay_source;
  bool have_ctx_checks = false;
  // Criterion 2 and 3 measurements on a real toy backdoored model.
  std::size_t fst_steps = 0;
  double fst_worst_projection = INFINITY;
  double fst_norm_vs_snapshot = INFINITY;
  std::size_t reduction_steps = 0;
  bool reduction_identical = false;
};

std::vector<const Row*> select(const Shared& sh, const std::function<bool(const Row&)>& pred) {
  std::vector<const Row*> out;
  for (const auto& r : sh.rows)
    if (pred(r)) out.push_back(&r);
  return out;
}

// Clean model trained on the same remainder split as the 2% tuning cells.
double clean_baseline(std::uint64_t seed) {
  const ExperimentPlan p = parse_config_json(json::object());
  DataBundle data = load_data(p, seed);
  const TuneSplit split = split_tune(data.train, {0.02, seed});
  TrainConfig tc = p.train;
  tc.seed = seed;
  const auto spec = p.model_spec(data.test.sample_shape(), data.test.class_count);
  const TrainResult r = train_model(split.remainder, spec, tc);
  return clean_accuracy(r.model, data.test).fraction;
}

// FST projection and the FT-init reduction, measured directly on the
// defense results rather than through the stored records.
void structural_checks(const AttackContext& ctx, const ExperimentPlan& p, Shared& sh) {
  DefenseConfig fst = p.defense_defaults;
  fst.kind = DefenseKind::FST;
  fst.seed = ctx.backdoored.meta.train.seed;
  const DefenseResult r = run_fst(ctx.backdoored.model, ctx.split.tune, fst);
  const auto& head = ctx.backdoored.model.head();
  const auto dense = ctx.backdoored.model.head_dense_layers();
  const double snapshot = frobenius_norm(head[dense.back()].weight);
  sh.fst_steps = r.step_head_norms.size();
  sh.fst_norm_vs_snapshot = std::abs(r.head_norm_target - snapshot) / snapshot;
  sh.fst_worst_projection = 0.0;
  for (double n : r.step_head_norms)
    sh.fst_worst_projection = std::max(sh.fst_worst_projection, std::abs(n - snapshot) / snapshot);

  DefenseConfig reduced = fst;
  reduced.alpha = 0.0;
  reduced.projection = false;
  DefenseConfig init = fst;
  init.kind = DefenseKind::FTInit;
  const DefenseResult a = run_fst(ctx.backdoored.model, ctx.split.tune, reduced);
  const DefenseResult b = run_ft_init(ctx.backdoored.model, ctx.split.tune, init);
  bool same = a.steps == b.steps;
  for (std::size_t i = 0; same && i < a.model.registry().size(); ++i)
    same = a.model.param(i) == b.model.param(i);
  sh.reduction_steps = std::min(a.steps, b.steps);
  sh.reduction_identical = same;
  sh.have_ctx_checks = true;
}

void run_setting(const Setting& s, Shared& sh, bool keep_for_replay, bool structural) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentPlan p = parse_config_json(setting_config(s));
  const auto cells = p.cells();
  const AttackContext ctx = prepare_attack(p, cells.front());
  ExperimentResult res;
  res.plan = plan_to_json(p);
  for (const auto& c : cells) {
    Row row{s.trigger, s.rate, s.tune, s.seed, s.adaptive, c.defense.kind, c.defense.alpha,
            ctx.seconds, run_defense_cell(p, c, ctx)};
    if (keep_for_replay) res.records.push_back(row.rec);
    sh.rows.push_back(std::move(row));
  }
  if (keep_for_replay) sh.replay_source = std::move(res);
  if (structural) structural_checks(ctx, p, sh);
  std::fprintf(stderr, "  %s%s rate=%g tune=%g seed=%llu: pre asr %.3f c-acc %.3f (%.1f s)\n",
               s.adaptive ? "adaptive-" : "", s.trigger.c_str(), s.rate, s.tune,
               static_cast<unsigned long long>(s.seed), ctx.backdoored.meta.metrics.asr(),
               ctx.backdoored.meta.metrics.c_acc(), seconds_since(t0));
}

// ---------------------------------------------------------------------------
// Criteria that need no toy training

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::size_t k = 0; k < kGradModels; ++k) {
    Rng rng(1000 + k);
    ModelSpec spec;
    const std::size_t classes = 2 + rng.below(3);
    switch (k % 4) {
      case 0: spec = ModelSpec::mlp({3, 3, 1}, {2 + rng.below(5)}, classes); break;
      case 1: spec = ModelSpec::mlp({3, 2, 2}, {4, 3}, classes, {2 + rng.below(4)}); break;
      case 2: spec = ModelSpec::conv({4, 4, 1 + rng.below(2)}, {2}, {3}, classes); break;
      default: spec = ModelSpec::conv({4, 4, 1}, {2, 2}, {}, classes); break;
    }
    const ModelSplit m = fixtures::random_model(spec, 2000 + k);
    const Tensor x = fixtures::random_batch(3 + rng.below(3), spec.input_shape, rng);
    const auto y = fixtures::random_labels(x.shape()[0], classes, rng);
    HeadPenalty pen;
    pen.alpha = rng.uniform(0.05, 1.0);
    for (std::size_t li : m.head_dense_layers()) {
      pen.layers.push_back(li);
      Tensor ref(m.head()[li].weight.shape());
      for (double& v : ref.values()) v = rng.uniform(-1, 1);
      pen.reference.push_back(ref);
    }
    worst = std::max(worst, fixtures::max_gradient_error(m, x, y, &pen));
  }
  const double secs = seconds_since(t0);
  verdict(1, "gradient oracle", worst < kGradTol && secs < kGradSeconds,
          fmt("%zu models, max rel err %.2e (< %.0e), %.2f s (< %.0f s)", kGradModels, worst,
              kGradTol, secs, kGradSeconds));
}

Label naive_predict(const ModelSplit& m, std::span<const double> img, const Shape& sample) {
  Shape s{1};
  s.insert(s.end(), sample.begin(), sample.end());
  const Tensor z = forward_logits(m, Tensor(s, std::vector<double>(img.begin(), img.end())));
  Label best = 0;
  for (std::size_t k = 1; k < z.size(); ++k)
    if (z[k] > z[best]) best = static_cast<Label>(k);
  return best;
}

void criterion_metric_oracles() {
  bool metrics_ok = true;
  std::size_t fixtures_run = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    Rng rng(seed, stream::kData);
    const auto test = gen_synthetic(fixtures::small_spec(4 + 4 * seed), rng);  // N = 32 .. 112
    if (test.size() > 100) continue;
    const auto m = fixtures::random_model(ModelSpec::mlp({8, 8, 1}, {12}, 4), seed);
    const auto trig = seed % 2 ? TriggerSpec::checkerboard(3)
                               : TriggerSpec::blended(8, 8, 1, 0.2, rng);
    const Label target = static_cast<Label>(seed % 4);
    const auto eval = make_attack_eval_set(test, trig, target);
    std::size_t correct = 0, hits = 0, evaluated = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      correct += naive_predict(m, test.image(i), test.sample_shape()) == test.labels[i];
      if (test.labels[i] == target) continue;
      const Tensor img(test.sample_shape(),
                       std::vector<double>(test.image(i).begin(), test.image(i).end()));
      hits += naive_predict(m, apply_trigger(img, trig).values(), test.sample_shape()) == target;
      ++evaluated;
    }
    const auto rep = evaluate(m, test, eval);
    metrics_ok = metrics_ok && rep.clean.hits == correct && rep.attack.hits == hits &&
                 rep.attack.evaluated == evaluated &&
                 rep.c_acc() == static_cast<double>(correct) / static_cast<double>(test.size()) &&
                 rep.asr() == static_cast<double>(hits) / static_cast<double>(evaluated);
    ++fixtures_run;
  }

  fixtures::TempDir dir("acceptance-idx");
  SyntheticSpec spec = fixtures::small_spec(7);
  spec.width = 10;
  Rng rng(3, stream::kData);
  ImageDataset d = gen_synthetic(spec, rng);
  // Quantize to bytes first; IDX stores uint8.
  for (double& v : d.images.values()) v = std::round(v * 255.0) / 255.0;
  const std::string img = (dir.path / "img.idx").string(), lab = (dir.path / "lab.idx").string();
  write_idx(d, img, lab);
  const ImageDataset back = load_idx(img, lab, spec.classes);
  const std::string img2 = (dir.path / "img2.idx").string(), lab2 = (dir.path / "lab2.idx").string();
  write_idx(back, img2, lab2);
  const bool idx_ok = back.images == d.images && back.labels == d.labels &&
                      read_text(img) == read_text(img2) && read_text(lab) == read_text(lab2);
  verdict(13, "metric and IDX oracles", metrics_ok && idx_ok && fixtures_run >= 3,
          fmt("%zu fixtures (N <= 100) exact: %s; IDX round trip bit-exact: %s", fixtures_run,
              metrics_ok ? "yes" : "no", idx_ok ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// Criteria over the shared toy runs

bool is(const Row& r, const char* trig, double rate, DefenseKind kind, double tune = 0.02) {
  return !r.adaptive && r.trigger == trig && r.rate == rate && r.tune == tune && r.kind == kind;
}

void criterion_insertion(const Shared& sh) {
  bool pass = true;
  std::string detail;
  double slowest = 0.0;
  for (double rate : {0.05, 0.01}) {
    std::size_t good = 0;
    for (auto* r : select(sh, [&](const Row& r) { return is(r, "patch", rate, DefenseKind::FST) &&
                                                         r.alpha == 0.2; })) {
      slowest = std::max(slowest, r->attack_seconds);
      const double base = sh.clean_baseline.at(r->seed);
      good += r->ok() && r->asr_before() >= kInsertAsr &&
              std::abs(r->cacc_before() - base) <= kInsertCaccPoints;
    }
    pass = pass && good >= kSeedsNeeded;
    detail += fmt("rate %g: %zu/5 seeds; ", rate, good);
  }
  pass = pass && slowest <= kRunSeconds;
  verdict(4, "backdoor insertion", pass,
          detail + fmt("ASR >= %.2f, |C-Acc - clean| <= %.2f, slowest run %.1f s (<= %.0f s)",
                       kInsertAsr, kInsertCaccPoints, slowest, kRunSeconds));
}

void criterion_vanilla(const Shared& sh) {
  bool pass = true;
  std::string detail;
  for (const char* trig : {"patch", "blended"})
    for (DefenseKind kind : {DefenseKind::LP, DefenseKind::FT}) {
      std::size_t good = 0;
      for (auto* r : select(sh, [&](const Row& r) { return is(r, trig, 0.01, kind); }))
        good += r->ok() && r->asr_after() >= kVanillaAsr &&
                std::abs(r->cacc_after() - r->cacc_before()) <= kVanillaCaccPoints;
      pass = pass && good >= kSeedsNeeded;
      detail += fmt("%s %s %zu/5; ", trig, to_string(kind), good);
    }
  verdict(5, "vanilla tuning fails at 1%", pass,
          detail + fmt("ASR >= %.2f, C-Acc within %.2f", kVanillaAsr, kVanillaCaccPoints));
}

void criterion_lp_high_rate(const Shared& sh) {
  bool pass = true;
  std::string detail;
  for (const char* trig : {"patch", "blended"}) {
    std::size_t good = 0;
    std::vector<double> asr;
    for (auto* r : select(sh, [&](const Row& r) { return is(r, trig, 0.10, DefenseKind::LP); })) {
      good += r->ok() && r->asr_after() <= kLpHighRateAsr;
      if (r->ok()) asr.push_back(r->asr_after());
    }
    pass = pass && good >= kSeedsNeeded;
    detail += fmt("%s %zu/5 (mean ASR %.3f); ", trig, good, mean_of(asr));
  }
  verdict(6, "LP succeeds at 10%", pass, detail + fmt("post-LP ASR <= %.2f", kLpHighRateAsr));
}

double mean_after_asr(const Shared& sh, const char* trig, double rate, DefenseKind kind) {
  std::vector<double> v;
  for (auto* r : select(sh, [&](const Row& r) {
         return is(r, trig, rate, kind) && (kind != DefenseKind::FST || r.alpha == 0.2);
       }))
    if (r->ok()) v.push_back(r->asr_after());
  return mean_of(v);
}

void criterion_fst(const Shared& sh) {
  bool pass = true;
  std::string detail;
  std::size_t worst_good = 5;
  double worst_asr = 0.0, worst_drop = 0.0;
  for (const char* trig : {"patch", "blended"})
    for (double rate : kFstRates) {
      std::size_t good = 0;
      for (auto* r : select(sh, [&](const Row& r) {
             return is(r, trig, rate, DefenseKind::FST) && r.alpha == 0.2;
           })) {
        if (!r->ok()) continue;
        const double drop = r->cacc_before() - r->cacc_after();
        good += r->asr_after() <= kFstAsr && drop <= kFstCaccDrop;
        worst_asr = std::max(worst_asr, r->asr_after());
        worst_drop = std::max(worst_drop, drop);
      }
      if (good < kSeedsNeeded) detail += fmt("%s %g only %zu/5; ", trig, rate, good);
      worst_good = std::min(worst_good, good);
      pass = pass && good >= kSeedsNeeded;
    }
  const double fst = mean_after_asr(sh, "blended", 0.01, DefenseKind::FST);
  const double init = mean_after_asr(sh, "blended", 0.01, DefenseKind::FTInit);
  const double ft = mean_after_asr(sh, "blended", 0.01, DefenseKind::FT);
  const bool ordered = fst < init && init < ft;
  verdict(7, "FST purification", pass && ordered,
          detail + fmt("8 cells, min %zu/5 seeds (ASR <= %.2f, drop <= %.2f; worst ASR %.3f, "
                       "worst drop %.3f); blended 1%% mean ASR FST %.3f < FT-init %.3f < FT %.3f",
                       worst_good, kFstAsr, kFstCaccDrop, worst_asr, worst_drop, fst, init, ft));
}

void criterion_adaptive(const Shared& sh) {
  std::size_t eligible = 0, good = 0;
  std::string detail;
  for (auto* r : select(sh, [](const Row& r) { return r.adaptive && r.kind == DefenseKind::FST; })) {
    if (!r->ok()) continue;
    detail += fmt("seed %llu %.3f->%.3f; ", static_cast<unsigned long long>(r->seed),
                  r->asr_before(), r->asr_after());
    if (r->asr_before() < kAdaptivePreAsr) continue;
    ++eligible;
    good += r->asr_after() <= kAdaptiveAsr;
  }
  verdict(8, "adaptive attack", eligible > 0 && good == eligible,
          detail + fmt("%zu/%zu seeds with pre-ASR >= %.2f end at ASR <= %.2f", good, eligible,
                       kAdaptivePreAsr, kAdaptiveAsr));
}

void criterion_separation(const Shared& sh) {
  std::size_t good = 0;
  std::string detail;
  for (auto* r : select(sh, [](const Row& r) {
         return is(r, "blended", 0.01, DefenseKind::FST) && r.alpha == 0.2;
       })) {
    if (!r->ok()) continue;
    const json& b = r->rec["before"]["separation"]["separationRatio"];
    const json& a = r->rec["after"]["separation"]["separationRatio"];
    if (b.is_null() || a.is_null()) continue;
    detail += fmt("%.2f->%.2f ", b.get<double>(), a.get<double>());
    good += a.get<double>() > b.get<double>();
  }
  verdict(9, "separability shift", good >= kSeedsNeeded,
          fmt("%zu/5 seeds increase (", good) + detail + ")");
}

void criterion_alpha(const Shared& sh) {
  bool pass = true;
  double lo = INFINITY, hi = -INFINITY;
  std::string detail;
  for (double a : kAlphas) {
    std::vector<double> asr, cacc;
    for (auto* r : select(sh, [&](const Row& r) {
           return !r.adaptive && r.rate == 0.01 && r.tune == 0.02 && r.kind == DefenseKind::FST &&
                  r.alpha == a;
         }))
      if (r->ok()) {
        asr.push_back(r->asr_after());
        cacc.push_back(r->cacc_after());
      }
    const double m_asr = mean_of(asr), m_cacc = mean_of(cacc);
    lo = std::min(lo, m_cacc);
    hi = std::max(hi, m_cacc);
    if (a >= 0.1) pass = pass && m_asr <= kAlphaAsr;
    detail += fmt("a=%g ASR %.3f; ", a, m_asr);
  }
  pass = pass && hi - lo <= kAlphaCaccRange;
  verdict(10, "alpha plateau", pass,
          detail + fmt("mean C-Acc range %.4f (<= %.2f), ASR <= %.2f for a >= 0.1", hi - lo,
                       kAlphaCaccRange, kAlphaAsr));
}

void criterion_tune_size(const Shared& sh) {
  bool pass = true;
  std::string detail;
  for (double f : kTuneFractions)
    for (const char* trig : {"patch", "blended"}) {
      std::vector<double> asr;
      std::size_t tune_size = 0;
      for (auto* r : select(sh, [&](const Row& r) {
             return is(r, trig, 0.01, DefenseKind::FST, f) && r.alpha == 0.2;
           }))
        if (r->ok()) {
          asr.push_back(r->asr_after());
          tune_size = r->rec["tuneSize"].get<std::size_t>();
        }
      const double m = mean_of(asr);
      pass = pass && asr.size() == kSeeds.size() && m <= kTuneSizeAsr;
      detail += fmt("%g (%zu samples) %s %.3f; ", f, tune_size, trig, m);
    }
  verdict(11, "tuning-set size", pass, detail + fmt("mean ASR <= %.2f", kTuneSizeAsr));
}

void criterion_replay(const Shared& sh) {
  bool pass = !sh.replay_source.records.empty();
  std::size_t checked = 0;
  for (std::size_t i = 0; pass && i < sh.replay_source.records.size(); ++i) {
    const std::string kind = sh.replay_source.records[i]["cell"]["defense"]["kind"];
    if (kind != "FST" && kind != "LP") continue;
    pass = replay(sh.replay_source, i).match;
    ++checked;
  }
  // Timing must not leak into the comparable form.
  ExperimentResult timed = sh.replay_source;
  timed.timing.push_back({0, 123.0, 456.0});
  timed.total_seconds = 789.0;
  pass = pass && result_to_json(timed, false).dump() == result_to_json(sh.replay_source, false).dump();
  verdict(12, "replay", pass && checked >= 2,
          fmt("%zu toy records replayed byte-identically: %s", checked, pass ? "yes" : "no"));
}

void criterion_structural(const Shared& sh) {
  verdict(2, "projection invariant",
          sh.have_ctx_checks && sh.fst_steps >= kProjectionMinSteps &&
              sh.fst_worst_projection <= kProjectionTol && sh.fst_norm_vs_snapshot <= kProjectionTol,
          fmt("%zu steps, max |norm - C|/C %.2e (<= %.0e), C vs snapshot %.2e", sh.fst_steps,
              sh.fst_worst_projection, kProjectionTol, sh.fst_norm_vs_snapshot));
  verdict(3, "reduction to FT-init",
          sh.have_ctx_checks && sh.reduction_identical && sh.reduction_steps >= kReductionMinSteps,
          fmt("%zu steps, bit-identical: %s", sh.reduction_steps,
              sh.reduction_identical ? "yes" : "no"));
}

void dump_rows(const Shared& sh, const std::string& path) {
  json out = json::array();
  for (const auto& r : sh.rows) {
    json j = r.rec;
    j["adaptive"] = r.adaptive;
    j["attackSeconds"] = r.attack_seconds;
    out.push_back(std::move(j));
  }
  std::ofstream(path) << out.dump(1) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  const auto t0 = std::chrono::steady_clock::now();
  criterion_gradients();
  criterion_metric_oracles();

  Shared sh;
  std::fprintf(stderr, "clean baselines\n");
  for (auto seed : kSeeds) sh.clean_baseline[seed] = clean_baseline(seed);

  std::fprintf(stderr, "toy attack settings\n");
  for (auto seed : kSeeds)
    for (const std::string trig : {"patch", "blended"}) {
      for (double rate : {0.20, 0.05, 0.005})
        run_setting({trig, rate, 0.02, seed, false, {"FST"}, {}}, sh, false, false);
      run_setting({trig, 0.10, 0.02, seed, false, {"LP"}, {}}, sh, false, false);
      const bool first_blended = trig == "blended" && seed == kSeeds.front();
      run_setting({trig, 0.01, 0.02, seed, false, {"LP", "FT", "FT-init", "FST"}, kAlphas}, sh,
                  first_blended, first_blended);
      for (double f : {0.001, 0.005})
        run_setting({trig, 0.01, f, seed, false, {"FST"}, {}}, sh, false, false);
    }
  for (auto seed : kSeeds)
    run_setting({"blended", 0.005, 0.02, seed, true, {"FST"}, {}}, sh, false, false);

  criterion_structural(sh);
  criterion_insertion(sh);
  criterion_vanilla(sh);
  criterion_lp_high_rate(sh);
  criterion_fst(sh);
  criterion_adaptive(sh);
  criterion_separation(sh);
  criterion_alpha(sh);
  criterion_tune_size(sh);
  criterion_replay(sh);

  dump_rows(sh, argc > 1 ? argv[1] : "acceptance_records.json");
  for (const auto& [id, line] : verdicts) std::printf("%s\n", line.c_str());
  std::printf("%d criteria failed, %.1f s total\n", failures, seconds_since(t0));
  return failures ? 1 : 0;
}
