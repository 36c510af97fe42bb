#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fstlab/errors.hpp"
#include "fstlab/model.hpp"
#include "fstlab/tensor.hpp"

namespace fstlab {

// Which side of the split an optimizer step may touch.
enum class ParamGroup { All, ExtractorOnly, HeadOnly };

inline bool in_group(ParamGroup g, Side s) {
  return g == ParamGroup::All || (g == ParamGroup::ExtractorOnly && s == Side::Extractor) ||
         (g == ParamGroup::HeadOnly && s == Side::Head);
}

struct OptimizerState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::vector<Tensor> velocity;  // mirrors the model registry

  static OptimizerState for_model(const ModelSplit& model, double lr, double momentum) {
    if (!(lr > 0.0)) throw InputError("optim.lr", "learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) {
      throw InputError("optim.momentum", "momentum must lie in [0, 1)");
    }
    OptimizerState s;
    s.learning_rate = lr;
    s.momentum = momentum;
    for (const ParamInfo& p : model.registry()) s.velocity.emplace_back(p.shape);
    return s;
  }
};

// v <- m*v + g ; p <- p - lr*v, for parameters in `group`.
inline void sgd_step(ModelSplit& model, const GradientSet& grads, OptimizerState& state,
                     ParamGroup group = ParamGroup::All) {
  grads.check_against(model);
  const auto& reg = model.registry();
  if (state.velocity.size() != reg.size()) {
    throw ConfigError("optim.registry", "optimizer state does not mirror the model");
  }
  for (std::size_t i = 0; i < reg.size(); ++i) {
    if (!in_group(group, reg[i].side)) continue;
    Tensor& p = model.param(i);
    Tensor& v = state.velocity[i];
    const Tensor& g = grads.grads[i];
    if (v.shape() != p.shape()) {
      throw ConfigError("optim.registry", "velocity shape mismatch for " + reg[i].key);
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j];
      p[j] -= state.learning_rate * v[j];
    }
  }
}

// Sharpness-aware step: ascend to p + rho*g/||g|| (global l2 norm over the
// trainable group), take the gradient there, restore p, then apply sgd_step
// with that gradient. A zero gradient norm (or rho = 0) degrades to a plain
// sgd_step.
// Returns the cross-entropy at the original point.
inline double sam_step(ModelSplit& model, const Tensor& batch, std::span<const Label> labels,
                       double rho, OptimizerState& state, ParamGroup group = ParamGroup::All,
                       const HeadPenalty* penalty = nullptr) {
  if (rho < 0.0) throw InputError("sam.rho", "rho must be non-negative");
  BackwardResult first = backward(model, batch, labels, penalty);
  const auto& reg = model.registry();
  double sq = 0.0;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    if (in_group(group, reg[i].side)) {
      sq += dot(first.grads.grads[i].values(), first.grads.grads[i].values());
    }
  }
  const double norm = std::sqrt(sq);
  if (norm == 0.0 || rho == 0.0) {
    sgd_step(model, first.grads, state, group);
    return first.loss;
  }
  std::vector<Tensor> saved;
  saved.reserve(reg.size());
  const double scale = rho / norm;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    saved.push_back(model.param(i));
    if (!in_group(group, reg[i].side)) continue;
    Tensor& p = model.param(i);
    const Tensor& g = first.grads.grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) p[j] += scale * g[j];
  }
  BackwardResult second = backward(model, batch, labels, penalty);
  for (std::size_t i = 0; i < reg.size(); ++i) model.param(i) = std::move(saved[i]);
  sgd_step(model, second.grads, state, group);
  return first.loss;
}

}  // namespace fstlab
