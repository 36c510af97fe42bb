#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fstlab/errors.hpp"
#include "fstlab/metrics.hpp"
#include "fstlab/model.hpp"
#include "fstlab/optim.hpp"
#include "fstlab/poison.hpp"
#include "fstlab/rng.hpp"

namespace fstlab {

enum class DefenseKind { LP, FT, FETuning, FTInit, FTSAM, FST };

inline const char* to_string(DefenseKind k) {
  switch (k) {
    case DefenseKind::LP: return "LP";
    case DefenseKind::FT: return "FT";
    case DefenseKind::FETuning: return "FE-tuning";
    case DefenseKind::FTInit: return "FT-init";
    case DefenseKind::FTSAM: return "FT+SAM";
    case DefenseKind::FST: return "FST";
  }
  return "?";
}

inline DefenseKind defense_kind_from_string(const std::string& s) {
  for (DefenseKind k : {DefenseKind::LP, DefenseKind::FT, DefenseKind::FETuning,
                        DefenseKind::FTInit, DefenseKind::FTSAM, DefenseKind::FST}) {
    if (s == to_string(k)) return k;
  }
  throw InputError("defense.kind", "unknown defense '" + s + "'");
}

struct DefenseConfig {
  DefenseKind kind = DefenseKind::FST;
  double learning_rate = 0.01;
  double alpha = 0.2;            // FST
  double rho = 0.1;              // FT+SAM
  bool projection = true;        // FST
  bool whole_head = false;       // FST: regularize/project every head layer
  bool lp_reinit = false;        // LP: start from a fresh head
  std::size_t epochs = 10;
  std::size_t batch_size = 10;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InputError("defense.lr", "learning rate must be positive");
    if (alpha < 0.0) throw InputError("defense.alpha", "alpha must be non-negative");
    if (kind == DefenseKind::FTSAM && !(rho > 0.0)) {
      throw InputError("defense.rho", "FT+SAM requires rho > 0");
    }
    if (batch_size < 1) throw InputError("defense.batch_size", "batchSize must be at least 1");
    if (momentum < 0.0 || momentum >= 1.0) {
      throw InputError("defense.momentum", "momentum must lie in [0, 1)");
    }
  }

  std::string label() const;
};

inline std::string DefenseConfig::label() const {
  std::string s = to_string(kind);
  if (kind == DefenseKind::FST) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "(a=%g%s%s)", alpha, projection ? "" : ";noproj",
                  whole_head ? ";whole" : "");
    s += buf;
  } else if (kind == DefenseKind::FTSAM) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "(rho=%g)", rho);
    s += buf;
  }
  return s;
}

// Copies of the backdoored head weights, taken before any re-init.
struct HeadSnapshot {
  std::vector<std::size_t> layers;  // head layer indices
  std::vector<Tensor> weights;      // wOri per layer
  std::vector<double> norms;        // C_i = ||wOri_i||_F
  double norm = 0.0;                // C over all snapshotted layers

  static HeadSnapshot take(const ModelSplit& model, bool whole_head) {
    HeadSnapshot s;
    auto dense = model.head_dense_layers();
    s.layers = whole_head ? dense : std::vector<std::size_t>{dense.back()};
    double sq = 0.0;
    for (std::size_t li : s.layers) {
      s.weights.push_back(model.head()[li].weight);
      s.norms.push_back(frobenius_norm(s.weights.back()));
      sq += s.norms.back() * s.norms.back();
    }
    s.norm = std::sqrt(sq);
    return s;
  }
};

inline void check_same_shapes(std::span<const Tensor> w, std::span<const Tensor> w_ori) {
  if (w.size() != w_ori.size()) {
    throw ConfigError("penalty.shape", "head layer count mismatch");
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i].shape() != w_ori[i].shape()) {
      throw ConfigError("penalty.shape", "head weight " + shape_string(w[i].shape()) +
                                             " vs wOri " + shape_string(w_ori[i].shape()));
    }
  }
}

// alpha * sum_i <w_i, wOri_i>_F.
inline double inner_product_penalty(std::span<const Tensor> w, std::span<const Tensor> w_ori,
                                    double alpha) {
  check_same_shapes(w, w_ori);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += dot(w[i].values(), w_ori[i].values());
  return alpha * s;
}

inline double inner_product_penalty(const Tensor& w, const Tensor& w_ori, double alpha) {
  return inner_product_penalty(std::span(&w, 1), std::span(&w_ori, 1), alpha);
}

// w <- w * C / ||w||_F.
inline void project_head(Tensor& w, double c) {
  const double n = frobenius_norm(w);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw NumericError("projection.degenerate", "cannot project a head with norm " + std::to_string(n));
  }
  const double scale = c / n;
  for (double& v : w.values()) v *= scale;
}

struct DefenseEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;           // mean cross-entropy over the epoch
  double inner_product = 0.0;  // <w, wOri> at epoch end
  double penalty = 0.0;        // alpha * <w, wOri>
  double head_norm = 0.0;      // ||w||_F over the snapshotted layers
  std::optional<double> c_acc;
  std::optional<double> asr;
};

struct DefenseResult {
  ModelSplit model;
  DefenseConfig config;
  double head_norm_target = 0.0;       // C
  std::vector<DefenseEpoch> trace;
  std::vector<double> step_head_norms;  // after every optimizer step
  std::size_t steps = 0;
};

// Optional held-out sets for per-epoch C-Acc/ASR tracing.
struct DefenseMonitor {
  const ImageDataset* test = nullptr;
  const AttackEvalSet* attack = nullptr;
};

namespace detail {

inline double head_norm(const ModelSplit& m, const HeadSnapshot& snap) {
  double sq = 0.0;
  for (std::size_t li : snap.layers) {
    const Tensor& w = m.head()[li].weight;
    sq += dot(w.values(), w.values());
  }
  return std::sqrt(sq);
}

inline double head_inner(const ModelSplit& m, const HeadSnapshot& snap) {
  double s = 0.0;
  for (std::size_t i = 0; i < snap.layers.size(); ++i) {
    s += dot(m.head()[snap.layers[i]].weight.values(), snap.weights[i].values());
  }
  return s;
}

}  // namespace detail

// Shared tuning loop behind all six procedures. The input model is never
// modified; the run owns a deep copy.
inline DefenseResult run_defense(const ModelSplit& backdoored, const CleanTuneSet& tune,
                                 const DefenseConfig& cfg, const DefenseMonitor& monitor = {}) {
  cfg.validate();
  if (tune.size() == 0) throw InputError("defense.empty", "tuning set is empty");
  const ImageDataset& data = tune.data();

  DefenseResult r{backdoored, cfg, 0.0, {}, {}, 0};
  ModelSplit& m = r.model;
  const bool is_fst = cfg.kind == DefenseKind::FST;
  const HeadSnapshot snap = HeadSnapshot::take(m, is_fst && cfg.whole_head);
  r.head_norm_target = snap.norm;
  if (is_fst && cfg.projection && !(snap.norm > 0.0)) {
    throw NumericError("projection.degenerate", "backdoored head has zero norm");
  }

  Rng init_rng(cfg.seed, stream::kDefense);
  const bool reinit = cfg.kind == DefenseKind::FETuning || cfg.kind == DefenseKind::FTInit ||
                      cfg.kind == DefenseKind::FST ||
                      (cfg.kind == DefenseKind::LP && cfg.lp_reinit);
  if (reinit) reinit_head(m, init_rng);

  ParamGroup group = ParamGroup::All;
  if (cfg.kind == DefenseKind::LP) group = ParamGroup::HeadOnly;
  if (cfg.kind == DefenseKind::FETuning) group = ParamGroup::ExtractorOnly;

  HeadPenalty penalty;
  const HeadPenalty* penalty_ptr = nullptr;
  if (is_fst) {
    penalty.alpha = cfg.alpha;
    penalty.layers = snap.layers;
    penalty.reference = snap.weights;
    penalty_ptr = &penalty;
  }
  const bool project = is_fst && cfg.projection;

  OptimizerState opt = OptimizerState::for_model(m, cfg.learning_rate, cfg.momentum);
  Rng shuffle_rng(cfg.seed, stream::kShuffle);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      auto [batch, labels] = gather_batch(data, std::span(order).subspan(s, e - s));
      double loss;
      if (cfg.kind == DefenseKind::FTSAM) {
        loss = sam_step(m, batch, labels, cfg.rho, opt, group, penalty_ptr);
      } else {
        BackwardResult br = backward(m, batch, labels, penalty_ptr);
        loss = br.loss;
        sgd_step(m, br.grads, opt, group);
      }
      if (!std::isfinite(loss)) throw TrainingError(epoch, "defense loss is not finite");
      if (project) {
        for (std::size_t i = 0; i < snap.layers.size(); ++i) {
          project_head(m.head()[snap.layers[i]].weight, snap.norms[i]);
        }
      }
      r.step_head_norms.push_back(detail::head_norm(m, snap));
      loss_sum += loss;
      ++batches;
      ++r.steps;
    }
    DefenseEpoch t;
    t.epoch = epoch + 1;
    t.loss = loss_sum / static_cast<double>(batches);
    t.inner_product = detail::head_inner(m, snap);
    t.penalty = is_fst ? cfg.alpha * t.inner_product : 0.0;
    t.head_norm = detail::head_norm(m, snap);
    if (monitor.test) t.c_acc = clean_accuracy(m, *monitor.test).fraction;
    if (monitor.attack) t.asr = attack_success_rate(m, *monitor.attack).fraction;
    r.trace.push_back(t);
  }
  return r;
}

namespace detail {
inline DefenseResult run_as(DefenseKind kind, const ModelSplit& m, const CleanTuneSet& tune,
                            DefenseConfig cfg, const DefenseMonitor& mon) {
  cfg.kind = kind;
  return run_defense(m, tune, cfg, mon);
}
}  // namespace detail

// Head-only tuning; the extractor stays bit-identical.
inline DefenseResult run_lp(const ModelSplit& m, const CleanTuneSet& t, const DefenseConfig& c,
                            const DefenseMonitor& mon = {}) {
  return detail::run_as(DefenseKind::LP, m, t, c, mon);
}
// End-to-end tuning from the backdoored weights.
inline DefenseResult run_ft(const ModelSplit& m, const CleanTuneSet& t, const DefenseConfig& c,
                            const DefenseMonitor& mon = {}) {
  return detail::run_as(DefenseKind::FT, m, t, c, mon);
}
// Re-initialized, frozen head; extractor tuned.
inline DefenseResult run_fe_tuning(const ModelSplit& m, const CleanTuneSet& t,
                                   const DefenseConfig& c, const DefenseMonitor& mon = {}) {
  return detail::run_as(DefenseKind::FETuning, m, t, c, mon);
}
// Re-initialized head, end-to-end tuning.
inline DefenseResult run_ft_init(const ModelSplit& m, const CleanTuneSet& t,
                                 const DefenseConfig& c, const DefenseMonitor& mon = {}) {
  return detail::run_as(DefenseKind::FTInit, m, t, c, mon);
}
inline DefenseResult run_ft_sam(const ModelSplit& m, const CleanTuneSet& t,
                                const DefenseConfig& c, const DefenseMonitor& mon = {}) {
  return detail::run_as(DefenseKind::FTSAM, m, t, c, mon);
}
// Feature shift tuning: snapshot wOri and C, re-initialize the head, then
// per minibatch descend CE + alpha*<w, wOri> and rescale w to norm C.
inline DefenseResult run_fst(const ModelSplit& m, const CleanTuneSet& t, const DefenseConfig& c,
                             const DefenseMonitor& mon = {}) {
  return detail::run_as(DefenseKind::FST, m, t, c, mon);
}

}  // namespace fstlab
