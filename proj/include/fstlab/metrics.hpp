#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "fstlab/dataset.hpp"
#include "fstlab/errors.hpp"
#include "fstlab/model.hpp"
#include "fstlab/poison.hpp"

namespace fstlab {

inline constexpr std::size_t kEvalBatch = 256;

// argmax per row; ties resolve to the lowest class index.
inline std::vector<Label> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<Label> out(n);
  for (std::size_t b = 0; b < n; ++b) {
    const double* row = logits.data() + b * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[b] = static_cast<Label>(best);
  }
  return out;
}

inline std::vector<Label> predict(const ModelSplit& model, const ImageDataset& data) {
  std::vector<Label> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t s = 0; s < data.size(); s += kEvalBatch) {
    const std::size_t e = std::min(data.size(), s + kEvalBatch);
    auto [batch, labels] = gather_batch(data, std::span(idx).subspan(s, e - s));
    const auto p = argmax_rows(forward_logits(model, batch));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// Features phi(x) for a whole dataset, [N, D].
inline Tensor extract_features(const ModelSplit& model, const ImageDataset& data) {
  Tensor out({data.size(), model.feature_width()});
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t s = 0; s < data.size(); s += kEvalBatch) {
    const std::size_t e = std::min(data.size(), s + kEvalBatch);
    auto [batch, labels] = gather_batch(data, std::span(idx).subspan(s, e - s));
    const Tensor f = forward_features(model, batch);
    std::copy(f.values().begin(), f.values().end(), out.data() + s * model.feature_width());
  }
  return out;
}

// `hits` correct predictions (C-Acc) or target predictions (ASR) out of
// `evaluated`; `fraction` is exactly hits / evaluated.
struct RateCount {
  std::size_t evaluated = 0;
  std::size_t hits = 0;
  double fraction = 0.0;
};

struct MetricsReport {
  RateCount clean;
  RateCount attack;
  double c_acc() const { return clean.fraction; }
  double asr() const { return attack.fraction; }
};

inline RateCount make_rate(std::size_t hits, std::size_t evaluated) {
  return {evaluated, hits,
          evaluated ? static_cast<double>(hits) / static_cast<double>(evaluated) : 0.0};
}

inline RateCount clean_accuracy(const ModelSplit& model, const ImageDataset& test) {
  if (test.size() == 0) throw InputError("metrics.empty", "clean test set is empty");
  const auto pred = predict(model, test);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test.labels[i];
  return make_rate(hits, pred.size());
}

inline RateCount attack_success_rate(const ModelSplit& model, const AttackEvalSet& eval) {
  if (eval.dataset.size() == 0) {
    throw InputError("metrics.empty", "attack evaluation set is empty");
  }
  const auto pred = predict(model, eval.dataset);
  std::size_t hits = 0;
  for (Label p : pred) hits += p == eval.target_label;
  return make_rate(hits, pred.size());
}

inline MetricsReport evaluate(const ModelSplit& model, const ImageDataset& test,
                              const AttackEvalSet& attack) {
  return {clean_accuracy(model, test), attack_success_rate(model, attack)};
}

// Clean-target vs. backdoor feature clusters.
struct SeparationReport {
  double inter_centroid_distance = 0.0;
  double mean_intra_spread = 0.0;
  double separation_ratio = 0.0;
  double silhouette = 0.0;
};

// Two-cluster report on raw feature rows ([Na, D] and [Nb, D]).
inline SeparationReport separation_from_features(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw InputError("separation.shape", "feature sets must be [N, D] with equal D");
  }
  if (a.dim(0) < 2 || b.dim(0) < 2) {
    throw InputError("separation.too_small", "need at least 2 samples per set");
  }
  const std::size_t d = a.dim(1);
  auto centroid = [d](const Tensor& t) {
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < t.dim(0); ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += t.at(i, j);
    for (double& v : mu) v /= static_cast<double>(t.dim(0));
    return mu;
  };
  auto dist_to = [d](const double* x, const double* y) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (x[j] - y[j]) * (x[j] - y[j]);
    return std::sqrt(s);
  };
  const auto mu_a = centroid(a), mu_b = centroid(b);
  auto spread = [&](const Tensor& t, const std::vector<double>& mu) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.dim(0); ++i) s += dist_to(t.data() + i * d, mu.data());
    return s / static_cast<double>(t.dim(0));
  };

  SeparationReport r;
  r.inter_centroid_distance = dist_to(mu_a.data(), mu_b.data());
  r.mean_intra_spread = 0.5 * (spread(a, mu_a) + spread(b, mu_b));
  r.separation_ratio = r.mean_intra_spread > 0.0
                           ? r.inter_centroid_distance / r.mean_intra_spread
                           : (r.inter_centroid_distance > 0.0 ? INFINITY : 0.0);

  // Silhouette: s = (b - a) / max(a, b) per point, averaged over all points.
  double total = 0.0;
  auto accumulate = [&](const Tensor& own, const Tensor& other) {
    for (std::size_t i = 0; i < own.dim(0); ++i) {
      const double* x = own.data() + i * d;
      double in = 0.0, out = 0.0;
      for (std::size_t j = 0; j < own.dim(0); ++j) {
        if (j != i) in += dist_to(x, own.data() + j * d);
      }
      for (std::size_t j = 0; j < other.dim(0); ++j) out += dist_to(x, other.data() + j * d);
      in /= static_cast<double>(own.dim(0) - 1);
      out /= static_cast<double>(other.dim(0));
      const double m = std::max(in, out);
      total += m > 0.0 ? (out - in) / m : 0.0;
    }
  };
  accumulate(a, b);
  accumulate(b, a);
  r.silhouette = total / static_cast<double>(a.dim(0) + b.dim(0));
  return r;
}

inline SeparationReport feature_separation(const ModelSplit& model,
                                           const ImageDataset& clean_target_samples,
                                           const ImageDataset& triggered_samples) {
  return separation_from_features(extract_features(model, clean_target_samples),
                                  extract_features(model, triggered_samples));
}

struct PcaResult {
  Tensor coords;                 // [N, r], r = available components
  std::vector<Tensor> components;  // unit vectors, length D
  std::vector<double> variances;   // eigenvalues of the covariance
  bool rank_deficient = false;
};

// Centered projection onto the top `dims` principal directions, found by
// power iteration on the covariance with deflation. Each component's
// largest-magnitude loading is made positive.
inline PcaResult pca_project(const Tensor& features, std::size_t dims = 2,
                             double tolerance = 1e-10, std::size_t max_iter = 1000) {
  if (features.rank() != 2) throw InputError("pca.shape", "features must be [N, D]");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (n <= dims) throw InputError("pca.too_small", "need more samples than dimensions");

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features.at(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  Tensor centered({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered.at(i, j) = features.at(i, j) - mean[j];

  Tensor cov({d, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p) {
      const double xp = centered.at(i, p);
      if (xp == 0.0) continue;
      for (std::size_t q = 0; q < d; ++q) cov.at(p, q) += xp * centered.at(i, q);
    }
  double trace = 0.0;
  for (std::size_t p = 0; p < d; ++p) trace += cov.at(p, p);
  for (double& v : cov.values()) v /= static_cast<double>(n - 1);
  trace /= static_cast<double>(n - 1);

  PcaResult out;
  for (std::size_t comp = 0; comp < dims; ++comp) {
    // Deterministic start: all ones plus a small index ramp to avoid
    // starting orthogonal to the leading direction.
    std::vector<double> v(d), w(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = 1.0 + 0.01 * static_cast<double>(j);
    double lambda = 0.0;
    for (std::size_t it = 0; it < max_iter; ++it) {
      double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      if (norm == 0.0) break;
      for (double& x : v) x /= norm;
      for (std::size_t p = 0; p < d; ++p) {
        w[p] = 0.0;
        for (std::size_t q = 0; q < d; ++q) w[p] += cov.at(p, q) * v[q];
      }
      const double next = std::inner_product(v.begin(), v.end(), w.begin(), 0.0);
      double diff = 0.0;
      const double wn = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
      if (wn > 0.0)
        for (std::size_t j = 0; j < d; ++j) diff = std::max(diff, std::abs(w[j] / wn - v[j]));
      v = w;
      const bool converged = std::abs(next - lambda) <= tolerance * std::max(1.0, std::abs(next)) &&
                             diff <= std::sqrt(tolerance);
      lambda = next;
      if (converged || wn == 0.0) break;
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm == 0.0 || lambda <= tolerance * std::max(1.0, trace)) {
      out.rank_deficient = true;
      break;
    }
    for (double& x : v) x /= norm;
    std::size_t big = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(v[j]) > std::abs(v[big])) big = j;
    }
    if (v[big] < 0.0)
      for (double& x : v) x = -x;
    // Rayleigh quotient on the normalized vector.
    lambda = 0.0;
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = 0; q < d; ++q) lambda += v[p] * cov.at(p, q) * v[q];
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = 0; q < d; ++q) cov.at(p, q) -= lambda * v[p] * v[q];
    out.components.emplace_back(Shape{d}, v);
    out.variances.push_back(lambda);
  }

  const std::size_t r = out.components.size();
  out.coords = Tensor({n, r});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < r; ++c)
      out.coords.at(i, c) = dot({centered.data() + i * d, d}, out.components[c].values());
  return out;
}

}  // namespace fstlab
