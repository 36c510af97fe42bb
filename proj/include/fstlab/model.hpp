#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fstlab/errors.hpp"
#include "fstlab/layers.hpp"
#include "fstlab/rng.hpp"
#include "fstlab/tensor.hpp"

namespace fstlab {

using Label = std::int32_t;

enum class Side { Extractor, Head };

// Architecture only: per-sample input shape, the extractor phi(theta; x)
// and the head f(w; z). The head holds dense layers (optionally separated
// by relu) and must start and end with a dense layer.
struct ModelSpec {
  Shape input_shape;
  std::vector<LayerSpec> extractor;
  std::vector<LayerSpec> head;
  std::size_t class_count = 0;

  // flatten -> [dense -> relu]* ; head dense(last hidden -> classes).
  // `head_hidden` inserts extra head layers for the multi-linear-head mode.
  static ModelSpec mlp(Shape input, const std::vector<std::size_t>& hidden,
                       std::size_t classes,
                       const std::vector<std::size_t>& head_hidden = {}) {
    ModelSpec s;
    s.input_shape = std::move(input);
    s.class_count = classes;
    s.extractor.push_back(LayerSpec::flatten());
    std::size_t width = shape_product(s.input_shape);
    for (std::size_t h : hidden) {
      s.extractor.push_back(LayerSpec::dense(width, h));
      s.extractor.push_back(LayerSpec::relu());
      width = h;
    }
    for (std::size_t h : head_hidden) {
      s.head.push_back(LayerSpec::dense(width, h));
      s.head.push_back(LayerSpec::relu());
      width = h;
    }
    s.head.push_back(LayerSpec::dense(width, classes));
    return s;
  }

  // [conv -> relu -> pool]* -> flatten -> [dense -> relu]* ; dense head.
  static ModelSpec conv(Shape input, const std::vector<std::size_t>& channels,
                        const std::vector<std::size_t>& hidden,
                        std::size_t classes) {
    ModelSpec s;
    s.input_shape = input;
    s.class_count = classes;
    std::size_t c = input.at(2), h = input.at(0), w = input.at(1);
    for (std::size_t oc : channels) {
      s.extractor.push_back(LayerSpec::conv2d(c, oc));
      s.extractor.push_back(LayerSpec::relu());
      s.extractor.push_back(LayerSpec::maxpool2x2());
      c = oc;
      h /= 2;
      w /= 2;
    }
    s.extractor.push_back(LayerSpec::flatten());
    std::size_t width = h * w * c;
    for (std::size_t hd : hidden) {
      s.extractor.push_back(LayerSpec::dense(width, hd));
      s.extractor.push_back(LayerSpec::relu());
      width = hd;
    }
    s.head.push_back(LayerSpec::dense(width, classes));
    return s;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Handle into the parameter registry. Registry order is: extractor layers
// in order (weight then bias), then head layers in order.
struct ParamInfo {
  std::string key;
  Side side;
  std::size_t layer;
  bool is_bias;
  Shape shape;
};

class ModelSplit {
 public:
  ModelSplit() = default;

  // Validates shape compatibility layer by layer; parameters start at zero.
  explicit ModelSplit(ModelSpec spec) : spec_(std::move(spec)) {
    if (spec_.class_count == 0) {
      throw ConfigError("model.shape", "classCount must be positive");
    }
    if (spec_.head.empty() || spec_.head.front().kind != LayerKind::Dense ||
        spec_.head.back().kind != LayerKind::Dense) {
      throw ConfigError("model.head", "head must start and end with a dense layer");
    }
    Shape s = spec_.input_shape;
    for (std::size_t i = 0; i < spec_.extractor.size(); ++i) {
      s = checked_shape(spec_.extractor[i], s, "extractor", i);
      extractor_.emplace_back(spec_.extractor[i]);
    }
    if (s.size() != 1) {
      throw ConfigError("model.shape", "extractor output " + shape_string(s) +
                                           " is not flat; add a flatten layer");
    }
    feature_width_ = s[0];
    for (std::size_t i = 0; i < spec_.head.size(); ++i) {
      const LayerKind k = spec_.head[i].kind;
      if (k != LayerKind::Dense && k != LayerKind::Relu) {
        throw ConfigError("model.head", "head layer " + std::to_string(i) +
                                            " must be dense or relu");
      }
      s = checked_shape(spec_.head[i], s, "head", i);
      head_.emplace_back(spec_.head[i]);
    }
    if (s[0] != spec_.class_count) {
      throw ConfigError("model.shape", "head output width " + std::to_string(s[0]) +
                                           " != classCount " +
                                           std::to_string(spec_.class_count));
    }
    build_registry();
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t class_count() const noexcept { return spec_.class_count; }
  std::size_t feature_width() const noexcept { return feature_width_; }

  std::vector<Layer>& extractor() noexcept { return extractor_; }
  const std::vector<Layer>& extractor() const noexcept { return extractor_; }
  std::vector<Layer>& head() noexcept { return head_; }
  const std::vector<Layer>& head() const noexcept { return head_; }

  const std::vector<ParamInfo>& registry() const noexcept { return registry_; }

  Tensor& param(std::size_t i) { return ref(registry_[i]); }
  const Tensor& param(std::size_t i) const {
    return const_cast<ModelSplit*>(this)->ref(registry_[i]);
  }

  // Head layer indices carrying weights, in order.
  std::vector<std::size_t> head_dense_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < head_.size(); ++i) {
      if (head_[i].spec.kind == LayerKind::Dense) out.push_back(i);
    }
    return out;
  }

  std::uint64_t checksum(Side side) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < registry_.size(); ++i) {
      if (registry_[i].side == side) h = fstlab::checksum(param(i), h);
    }
    return h;
  }

  std::uint64_t checksum() const {
    return checksum(Side::Head) ^ (checksum(Side::Extractor) * 0x100000001b3ULL);
  }

 private:
  static Shape checked_shape(const LayerSpec& l, const Shape& in,
                             const char* side, std::size_t i) {
    try {
      return layer_output_shape(l, in);
    } catch (const ConfigError& e) {
      throw ConfigError(e.code(), std::string(side) + " layer " +
                                      std::to_string(i) + ": " + e.what());
    }
  }

  void build_registry() {
    auto add = [&](const std::vector<Layer>& layers, Side side, const char* prefix) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& s = layers[i].spec;
        if (!s.has_params()) continue;
        const std::string base = std::string(prefix) + "." + std::to_string(i);
        registry_.push_back({base + ".weight", side, i, false, s.weight_shape()});
        if (s.bias) registry_.push_back({base + ".bias", side, i, true, {s.out}});
      }
    };
    add(extractor_, Side::Extractor, "extractor");
    add(head_, Side::Head, "head");
  }

  Tensor& ref(const ParamInfo& p) {
    Layer& l = p.side == Side::Extractor ? extractor_[p.layer] : head_[p.layer];
    return p.is_bias ? l.bias : l.weight;
  }

  ModelSpec spec_;
  std::vector<Layer> extractor_;
  std::vector<Layer> head_;
  std::vector<ParamInfo> registry_;
  std::size_t feature_width_ = 0;
};

// One gradient tensor per registry entry, keyed and ordered identically.
struct GradientSet {
  std::vector<std::string> keys;
  std::vector<Tensor> grads;

  std::size_t size() const noexcept { return grads.size(); }

  const Tensor& at(const std::string& key) const {
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (keys[i] == key) return grads[i];
    }
    throw ConfigError("grad.key", "no gradient for '" + key + "'");
  }

  // Throws unless keys and shapes match the model registry bijectively.
  void check_against(const ModelSplit& model) const {
    const auto& reg = model.registry();
    if (reg.size() != keys.size() || grads.size() != keys.size()) {
      throw ConfigError("grad.registry", "gradient set has " + std::to_string(keys.size()) +
                                             " entries, model has " +
                                             std::to_string(reg.size()));
    }
    for (std::size_t i = 0; i < reg.size(); ++i) {
      if (reg[i].key != keys[i] || reg[i].shape != grads[i].shape()) {
        throw ConfigError("grad.registry", "gradient entry " + std::to_string(i) +
                                               " ('" + keys[i] + "') does not match '" +
                                               reg[i].key + "'");
      }
    }
  }
};

inline void check_input(const ModelSplit& model, const Tensor& batch) {
  const Shape& in = model.spec().input_shape;
  if (batch.rank() != in.size() + 1 ||
      !std::equal(in.begin(), in.end(), batch.shape().begin() + 1)) {
    throw ConfigError("model.input", "layer 0: batch shape " + shape_string(batch.shape()) +
                                         " does not match model input " +
                                         shape_string(in));
  }
}

// phi(theta; x) for every row of the batch.
inline Tensor forward_features(const ModelSplit& model, const Tensor& batch) {
  check_input(model, batch);
  Tensor x = batch;
  for (const Layer& l : model.extractor()) x = layer_forward(l, x);
  return x;
}

inline Tensor forward_head(const ModelSplit& model, const Tensor& features) {
  Tensor x = features;
  for (const Layer& l : model.head()) x = layer_forward(l, x);
  return x;
}

inline Tensor forward_logits(const ModelSplit& model, const Tensor& batch) {
  return forward_head(model, forward_features(model, batch));
}

inline void check_labels(std::span<const Label> labels, std::size_t batch,
                         std::size_t classes) {
  if (labels.size() != batch) {
    throw InputError("labels.count", "got " + std::to_string(labels.size()) +
                                         " labels for a batch of " +
                                         std::to_string(batch));
  }
  for (Label y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InputError("labels.range", "label " + std::to_string(y) +
                                           " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

// Mean over the batch of -log softmax(logits)[label], max-subtracted.
inline double cross_entropy(const Tensor& logits, std::span<const Label> labels) {
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  check_labels(labels, batch, k);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = logits.data() + b * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    total += std::log(sum) - (row[labels[b]] - mx);
  }
  return total / static_cast<double>(batch);
}

// alpha * <w, wOri> on selected head layers' weight matrices (never biases).
struct HeadPenalty {
  double alpha = 0.0;
  std::vector<std::size_t> layers;   // head layer indices
  std::vector<Tensor> reference;     // wOri, one per entry of `layers`
};

struct BackwardResult {
  double loss = 0.0;  // cross-entropy only
  GradientSet grads;
};

inline BackwardResult backward(const ModelSplit& model, const Tensor& batch,
                               std::span<const Label> labels,
                               const HeadPenalty* penalty = nullptr) {
  if (penalty) {
    if (penalty->layers.size() != penalty->reference.size()) {
      throw ConfigError("penalty.shape", "penalty layer/reference count mismatch");
    }
    for (std::size_t i = 0; i < penalty->layers.size(); ++i) {
      const std::size_t li = penalty->layers[i];
      if (li >= model.head().size() || model.head()[li].spec.kind != LayerKind::Dense ||
          model.head()[li].weight.shape() != penalty->reference[i].shape()) {
        throw ConfigError("penalty.shape", "wOri for head layer " + std::to_string(li) +
                                               " does not match the head weights");
      }
    }
  }
  check_input(model, batch);
  const auto& ext = model.extractor();
  const auto& head = model.head();
  std::vector<Tensor> acts;
  acts.reserve(ext.size() + head.size() + 1);
  acts.push_back(batch);
  for (const Layer& l : ext) acts.push_back(layer_forward(l, acts.back()));
  for (const Layer& l : head) acts.push_back(layer_forward(l, acts.back()));

  const Tensor& logits = acts.back();
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  check_labels(labels, n, k);

  BackwardResult out;
  Tensor dy({n, k});
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const double* row = logits.data() + b * k;
    double* drow = dy.data() + b * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      drow[j] = std::exp(row[j] - mx);
      sum += drow[j];
    }
    total += std::log(sum) - (row[labels[b]] - mx);
    for (std::size_t j = 0; j < k; ++j) drow[j] /= sum * static_cast<double>(n);
    drow[labels[b]] -= 1.0 / static_cast<double>(n);
  }
  out.loss = total / static_cast<double>(n);

  std::vector<LayerGrads> hg(head.size()), eg(ext.size());
  for (std::size_t i = head.size(); i-- > 0;) {
    dy = layer_backward(head[i], acts[ext.size() + i], dy, hg[i]);
  }
  std::size_t first_param = ext.size();
  for (std::size_t i = 0; i < ext.size(); ++i) {
    if (ext[i].spec.has_params()) {
      first_param = i;
      break;
    }
  }
  for (std::size_t i = ext.size(); i-- > first_param;) {
    dy = layer_backward(ext[i], acts[i], dy, eg[i], i != first_param);
  }

  if (penalty && penalty->alpha != 0.0) {
    for (std::size_t i = 0; i < penalty->layers.size(); ++i) {
      Tensor& g = hg[penalty->layers[i]].weight;
      const Tensor& ref = penalty->reference[i];
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += penalty->alpha * ref[j];
    }
  }

  for (const ParamInfo& p : model.registry()) {
    LayerGrads& g = p.side == Side::Extractor ? eg[p.layer] : hg[p.layer];
    out.grads.keys.push_back(p.key);
    out.grads.grads.push_back(std::move(p.is_bias ? g.bias : g.weight));
  }
  return out;
}

// Fresh Kaiming-uniform parameters for every layer in registry order.
inline void init_params(ModelSplit& model, Rng& rng) {
  for (Layer& l : model.extractor()) init_layer(l, rng);
  for (Layer& l : model.head()) init_layer(l, rng);
}

// Redraws head parameters only; the extractor is left bit-identical.
inline void reinit_head(ModelSplit& model, Rng& rng) {
  for (Layer& l : model.head()) init_layer(l, rng);
}

}  // namespace fstlab
