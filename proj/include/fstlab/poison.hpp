#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fstlab/dataset.hpp"
#include "fstlab/errors.hpp"
#include "fstlab/rng.hpp"
#include "fstlab/tensor.hpp"

namespace fstlab {

enum class TriggerKind { Patch, Blended };

inline const char* to_string(TriggerKind k) {
  return k == TriggerKind::Patch ? "patch" : "blended";
}

// patch: a k x k x C pattern stamped `margin` pixels in from the lower-right
// corner. blended: out = (1 - r) * image + r * pattern over the whole image.
struct TriggerSpec {
  TriggerKind kind = TriggerKind::Patch;
  Tensor pattern;  // [k, k, C] or [H, W, C]
  std::size_t margin = 0;
  double blend_ratio = 0.2;

  std::string name() const { return to_string(kind); }

  static TriggerSpec checkerboard(std::size_t k, std::size_t channels = 1,
                                  std::size_t margin = 0) {
    TriggerSpec t;
    t.kind = TriggerKind::Patch;
    t.margin = margin;
    t.pattern = Tensor({k, k, channels});
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t ch = 0; ch < channels; ++ch)
          t.pattern[(r * k + c) * channels + ch] = (r + c) % 2 == 0 ? 1.0 : 0.0;
    return t;
  }

  // Seeded uniform-noise pattern as the full-image blend target.
  static TriggerSpec blended(std::size_t h, std::size_t w, std::size_t channels, double ratio,
                             Rng& rng) {
    TriggerSpec t;
    t.kind = TriggerKind::Blended;
    t.blend_ratio = ratio;
    t.pattern = Tensor({h, w, channels});
    for (double& v : t.pattern.values()) v = rng.uniform();
    return t;
  }

  void validate(const Shape& sample) const {
    if (pattern.rank() != 3 || sample.size() != 3 || pattern.dim(2) != sample[2]) {
      throw InputError("trigger.shape", "trigger pattern " + shape_string(pattern.shape()) +
                                            " incompatible with image " + shape_string(sample));
    }
    if (kind == TriggerKind::Patch) {
      if (pattern.dim(0) + margin > sample[0] || pattern.dim(1) + margin > sample[1]) {
        throw InputError("trigger.too_large", "patch " + shape_string(pattern.shape()) +
                                                  " does not fit in " + shape_string(sample));
      }
    } else {
      if (pattern.dim(0) != sample[0] || pattern.dim(1) != sample[1]) {
        throw InputError("trigger.too_large", "blend pattern " + shape_string(pattern.shape()) +
                                                  " must match image " + shape_string(sample));
      }
      if (!(blend_ratio > 0.0 && blend_ratio < 1.0)) {
        throw InputError("trigger.blend_ratio", "blend ratio must lie in (0, 1)");
      }
    }
  }
};

// In-place stamp on one HxWxC image view.
inline void stamp_trigger(std::span<double> image, const Shape& sample, const TriggerSpec& t) {
  const std::size_t h = sample[0], w = sample[1], ch = sample[2];
  if (t.kind == TriggerKind::Patch) {
    const std::size_t k0 = t.pattern.dim(0), k1 = t.pattern.dim(1);
    const std::size_t r0 = h - t.margin - k0, c0 = w - t.margin - k1;
    for (std::size_t r = 0; r < k0; ++r)
      for (std::size_t c = 0; c < k1; ++c)
        for (std::size_t q = 0; q < ch; ++q)
          image[((r0 + r) * w + c0 + c) * ch + q] = t.pattern[(r * k1 + c) * ch + q];
  } else {
    const double r = t.blend_ratio;
    for (std::size_t i = 0; i < image.size(); ++i) {
      image[i] = std::clamp((1.0 - r) * image[i] + r * t.pattern[i], 0.0, 1.0);
    }
  }
}

// Returns a triggered copy of a single [H, W, C] image.
inline Tensor apply_trigger(const Tensor& image, const TriggerSpec& t) {
  t.validate(image.shape());
  Tensor out = image;
  stamp_trigger(out.values(), image.shape(), t);
  return out;
}

enum class PoisonMode { DirtyLabel, CleanLabel, Adaptive };

inline const char* to_string(PoisonMode m) {
  switch (m) {
    case PoisonMode::DirtyLabel: return "dirtyLabel";
    case PoisonMode::CleanLabel: return "cleanLabel";
    case PoisonMode::Adaptive: return "adaptive";
  }
  return "?";
}

inline PoisonMode poison_mode_from_string(const std::string& s) {
  if (s == "dirtyLabel") return PoisonMode::DirtyLabel;
  if (s == "cleanLabel") return PoisonMode::CleanLabel;
  if (s == "adaptive") return PoisonMode::Adaptive;
  throw InputError("poison.mode", "unknown poison mode '" + s + "'");
}

struct PoisonSpec {
  double rate = 0.0;
  Label target_label = 0;
  PoisonMode mode = PoisonMode::DirtyLabel;
  double cover_rate = 0.0;  // adaptive mode only

  void validate(std::size_t classes) const {
    if (!(rate >= 0.0 && rate < 1.0)) throw InputError("poison.rate", "rate must lie in [0, 1)");
    if (cover_rate < 0.0 || rate + cover_rate >= 1.0) {
      throw InputError("poison.cover_rate", "rate + coverRate must be below 1");
    }
    if (target_label < 0 || static_cast<std::size_t>(target_label) >= classes) {
      throw InputError("poison.target", "target label outside the class range");
    }
  }
};

// Distinct from ImageDataset on purpose: defenses take a CleanTuneSet and
// can never be handed one of these.
struct PoisonedDataset {
  ImageDataset dataset;
  std::vector<std::size_t> poison_indices;
  std::vector<std::size_t> cover_indices;
};

namespace detail {

// `count` distinct indices drawn uniformly from `pool`, returned sorted.
inline std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> pool,
                                                         std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace detail

inline PoisonedDataset poison_dataset(const ImageDataset& clean, const PoisonSpec& ps,
                                      const TriggerSpec& ts, Rng& rng) {
  ps.validate(clean.class_count);
  ts.validate(clean.sample_shape());
  const std::size_t n = clean.size();
  const auto n_poison = static_cast<std::size_t>(std::floor(ps.rate * static_cast<double>(n)));
  const auto n_cover = ps.mode == PoisonMode::Adaptive
                           ? static_cast<std::size_t>(std::floor(ps.cover_rate * static_cast<double>(n)))
                           : std::size_t{0};

  std::vector<std::size_t> target, other;
  for (std::size_t i = 0; i < n; ++i) {
    (clean.labels[i] == ps.target_label ? target : other).push_back(i);
  }
  const auto& eligible = ps.mode == PoisonMode::CleanLabel ? target : other;
  if (eligible.size() < n_poison + n_cover) {
    throw InputError("poison.insufficient",
                     "need " + std::to_string(n_poison + n_cover) + " eligible samples, have " +
                         std::to_string(eligible.size()) + " (deficit " +
                         std::to_string(n_poison + n_cover - eligible.size()) + ")");
  }

  PoisonedDataset out;
  out.dataset = clean;
  std::vector<std::size_t> drawn = detail::draw_without_replacement(eligible, n_poison + n_cover, rng);
  if (n_cover > 0) {
    // First n_poison of a second shuffle become poison, the rest cover.
    std::vector<std::size_t> order = drawn;
    rng.shuffle(std::span<std::size_t>(order));
    out.poison_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_poison));
    out.cover_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_poison), order.end());
    std::sort(out.poison_indices.begin(), out.poison_indices.end());
    std::sort(out.cover_indices.begin(), out.cover_indices.end());
  } else {
    out.poison_indices = std::move(drawn);
  }

  const Shape sample = clean.sample_shape();
  for (std::size_t i : out.poison_indices) {
    stamp_trigger(out.dataset.image(i), sample, ts);
    if (ps.mode != PoisonMode::CleanLabel) out.dataset.labels[i] = ps.target_label;
  }
  for (std::size_t i : out.cover_indices) stamp_trigger(out.dataset.image(i), sample, ts);
  return out;
}

// Triggered test samples for ASR. `dataset.labels` keep the TRUE labels;
// target-class samples are excluded unless `include_target_class`.
struct AttackEvalSet {
  ImageDataset dataset;
  std::vector<std::size_t> source_indices;
  Label target_label = 0;
};

inline AttackEvalSet make_attack_eval_set(const ImageDataset& test, const TriggerSpec& ts,
                                          Label target, bool include_target_class = false) {
  if (test.size() == 0) throw InputError("attack_eval.empty", "test set is empty");
  ts.validate(test.sample_shape());
  AttackEvalSet out;
  out.target_label = target;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (include_target_class || test.labels[i] != target) out.source_indices.push_back(i);
  }
  out.dataset = test.subset(out.source_indices, test.name + "+trigger");
  const Shape sample = test.sample_shape();
  for (std::size_t i = 0; i < out.dataset.size(); ++i) {
    stamp_trigger(out.dataset.image(i), sample, ts);
  }
  return out;
}

// Clean tuning data handed to defenses. Only split_tune (or an explicit
// wrap of known-clean data) produces one.
class CleanTuneSet {
 public:
  explicit CleanTuneSet(ImageDataset data) : data_(std::move(data)) {}
  const ImageDataset& data() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }

 private:
  ImageDataset data_;
};

struct SplitSpec {
  double tune_fraction = 0.02;
  std::uint64_t seed = 0;
};

struct TuneSplit {
  ImageDataset remainder;
  CleanTuneSet tune;
  std::vector<std::size_t> tune_indices;  // into the original set, sorted
};

// Stratified, seed-deterministic split; |tune| = round(fraction * N) with
// per-class quotas by largest remainder.
inline TuneSplit split_tune(const ImageDataset& train, const SplitSpec& spec) {
  if (!(spec.tune_fraction > 0.0 && spec.tune_fraction < 0.5)) {
    throw InputError("split.fraction", "tuneFraction must lie in (0, 0.5)");
  }
  const double exact = spec.tune_fraction * static_cast<double>(train.size());
  const auto total = static_cast<std::size_t>(std::llround(exact));
  if (total < 1) {
    throw InputError("split.too_small", "tuneFraction * N = " + std::to_string(exact) +
                                            " yields no tuning samples");
  }
  const std::size_t k = train.class_count;
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < train.size(); ++i) by_class[train.labels[i]].push_back(i);

  std::vector<std::size_t> quota(k);
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double want = static_cast<double>(total) * static_cast<double>(by_class[c].size()) /
                        static_cast<double>(train.size());
    quota[c] = static_cast<std::size_t>(std::floor(want));
    assigned += quota[c];
    frac.emplace_back(-(want - std::floor(want)), c);
  }
  std::sort(frac.begin(), frac.end());
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++quota[frac[i % k].second];

  Rng rng = Rng(spec.seed, stream::kSplit);
  std::vector<std::size_t> tune_idx;
  for (std::size_t c = 0; c < k; ++c) {
    auto picked = detail::draw_without_replacement(by_class[c], std::min(quota[c], by_class[c].size()), rng);
    tune_idx.insert(tune_idx.end(), picked.begin(), picked.end());
  }
  std::sort(tune_idx.begin(), tune_idx.end());
  std::vector<std::size_t> rest;
  rest.reserve(train.size() - tune_idx.size());
  for (std::size_t i = 0, j = 0; i < train.size(); ++i) {
    if (j < tune_idx.size() && tune_idx[j] == i) {
      ++j;
    } else {
      rest.push_back(i);
    }
  }
  TuneSplit out{train.subset(rest, train.name + "/train"),
                CleanTuneSet(train.subset(tune_idx, train.name + "/tune")), tune_idx};
  return out;
}

}  // namespace fstlab
