#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fstlab/fstlab.hpp"

namespace fstlab::fixtures {

// Fresh model with Kaiming weights and small random biases so bias
// gradients are exercised away from zero.
inline ModelSplit random_model(const ModelSpec& spec, std::uint64_t seed) {
  ModelSplit m(spec);
  Rng rng(seed, stream::kInit);
  init_params(m, rng);
  for (std::size_t i = 0; i < m.registry().size(); ++i) {
    if (!m.registry()[i].is_bias) continue;
    for (double& v : m.param(i).values()) v = rng.uniform(-0.1, 0.1);
  }
  return m;
}

inline Tensor random_batch(std::size_t n, const Shape& sample, Rng& rng) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  Tensor t(s);
  for (double& v : t.values()) v = rng.uniform();
  return t;
}

inline std::vector<Label> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<Label> y(n);
  for (auto& v : y) v = static_cast<Label>(rng.below(k));
  return y;
}

// CE + alpha * sum <w_i, wOri_i>, evaluated directly.
inline double composite_loss(const ModelSplit& m, const Tensor& x, const std::vector<Label>& y,
                             const HeadPenalty* pen) {
  double loss = cross_entropy(forward_logits(m, x), y);
  if (pen) {
    for (std::size_t i = 0; i < pen->layers.size(); ++i) {
      loss += pen->alpha * dot(m.head()[pen->layers[i]].weight.values(),
                               pen->reference[i].values());
    }
  }
  return loss;
}

// Largest relative error between backward() and central differences over
// every parameter. The denominator has a floor so that entries whose true
// gradient is ~0 are judged on absolute error.
inline double max_gradient_error(ModelSplit m, const Tensor& x, const std::vector<Label>& y,
                                 const HeadPenalty* pen, double h = 1e-5) {
  const BackwardResult br = backward(m, x, y, pen);
  double worst = 0.0;
  for (std::size_t i = 0; i < m.registry().size(); ++i) {
    Tensor& p = m.param(i);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double keep = p[j];
      p[j] = keep + h;
      const double up = composite_loss(m, x, y, pen);
      p[j] = keep - h;
      const double down = composite_loss(m, x, y, pen);
      p[j] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = br.grads.grads[i][j];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

// Small synthetic task used by the training and defense tests.
inline SyntheticSpec small_spec(std::size_t per_class = 40) {
  SyntheticSpec s;
  s.classes = 4;
  s.per_class = per_class;
  s.height = 8;
  s.width = 8;
  return s;
}

// Scratch directory under the system temp dir, emptied on construction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("fstlab-test-" + name)) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace fstlab::fixtures
