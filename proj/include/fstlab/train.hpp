#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fstlab/dataset.hpp"
#include "fstlab/errors.hpp"
#include "fstlab/metrics.hpp"
#include "fstlab/model.hpp"
#include "fstlab/optim.hpp"
#include "fstlab/poison.hpp"
#include "fstlab/rng.hpp"

namespace fstlab {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool shuffle_each_epoch = true;

  void validate() const {
    if (epochs < 1) throw InputError("train.epochs", "epochs must be at least 1");
    if (batch_size < 1) throw InputError("train.batch_size", "batchSize must be at least 1");
    if (!(learning_rate > 0.0)) throw InputError("train.lr", "learning rate must be positive");
  }
};

struct TrainResult {
  ModelSplit model;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
  std::size_t steps = 0;
};

// Minibatch SGD-with-momentum on an already-initialized model.
inline std::vector<double> fit(ModelSplit& model, const ImageDataset& data,
                               const TrainConfig& cfg, std::size_t* steps = nullptr) {
  cfg.validate();
  if (data.size() == 0) throw InputError("train.empty", "training set is empty");
  OptimizerState opt = OptimizerState::for_model(model, cfg.learning_rate, cfg.momentum);
  Rng shuffle_rng(cfg.seed, stream::kShuffle);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> trace;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle_each_epoch) shuffle_rng.shuffle(std::span(order));
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      auto [batch, labels] = gather_batch(data, std::span(order).subspan(s, e - s));
      BackwardResult br = backward(model, batch, labels);
      if (!std::isfinite(br.loss)) throw TrainingError(epoch, "loss is not finite");
      sgd_step(model, br.grads, opt);
      sum += br.loss;
      ++batches;
      if (steps) ++*steps;
    }
    trace.push_back(sum / static_cast<double>(batches));
  }
  return trace;
}

// Fresh model from `spec` (Kaiming init from cfg.seed), trained on `data`.
inline TrainResult train_model(const ImageDataset& data, const ModelSpec& spec,
                               const TrainConfig& cfg) {
  cfg.validate();
  TrainResult r{ModelSplit(spec), {}, 0};
  Rng init_rng(cfg.seed, stream::kInit);
  init_params(r.model, init_rng);
  r.epoch_loss = fit(r.model, data, cfg, &r.steps);
  return r;
}

struct AttackMeta {
  TriggerSpec trigger;
  PoisonSpec poison;
  std::string dataset_name;
  TrainConfig train;
  std::size_t poisoned_count = 0;
  std::size_t cover_count = 0;
  MetricsReport metrics;
  bool attack_failed = false;
};

struct BackdooredModel {
  ModelSplit model;
  AttackMeta meta;
  std::vector<double> epoch_loss;
};

struct AttackEval {
  const ImageDataset* test = nullptr;
  const AttackEvalSet* attack = nullptr;
  // Runs with ASR below this are flagged attack-failed but still returned.
  double insertion_threshold = 0.80;
};

// Poisons `clean_train` (poison stream of `poison_rng`) and trains a fresh
// model on the result, then records C-Acc/ASR on the held-out sets.
inline BackdooredModel train_backdoored(const ImageDataset& clean_train, const PoisonSpec& ps,
                                        const TriggerSpec& ts, const ModelSpec& spec,
                                        const TrainConfig& cfg, Rng& poison_rng,
                                        const AttackEval& eval) {
  PoisonedDataset poisoned = poison_dataset(clean_train, ps, ts, poison_rng);
  TrainResult tr = train_model(poisoned.dataset, spec, cfg);
  BackdooredModel out{std::move(tr.model), {}, std::move(tr.epoch_loss)};
  out.meta.trigger = ts;
  out.meta.poison = ps;
  out.meta.dataset_name = clean_train.name;
  out.meta.train = cfg;
  out.meta.poisoned_count = poisoned.poison_indices.size();
  out.meta.cover_count = poisoned.cover_indices.size();
  if (eval.test && eval.attack) {
    out.meta.metrics = evaluate(out.model, *eval.test, *eval.attack);
    out.meta.attack_failed = out.meta.metrics.asr() < eval.insertion_threshold;
  }
  return out;
}

}  // namespace fstlab
