#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace fstlab;

namespace {

// Per-sample argmax via a fresh single-row forward pass each time.
Label naive_predict(const ModelSplit& m, std::span<const double> img, const Shape& sample) {
  Shape s{1};
  s.insert(s.end(), sample.begin(), sample.end());
  Tensor x(s, std::vector<double>(img.begin(), img.end()));
  const Tensor z = forward_logits(m, x);
  Label best = 0;
  for (std::size_t k = 1; k < z.size(); ++k)
    if (z[k] > z[best]) best = static_cast<Label>(k);
  return best;
}

// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
void jacobi(std::vector<std::vector<double>> a, std::vector<double>& vals,
            std::vector<std::vector<double>>& vecs) {
  const std::size_t n = a.size();
  vecs.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) vecs[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vecs[k][p], vkq = vecs[k][q];
          vecs[k][p] = c * vkp - s * vkq;
          vecs[k][q] = s * vkp + c * vkq;
        }
      }
  }
  vals.resize(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = a[i][i];
}

}  // namespace

class MetricOracle : public ::testing::TestWithParam<int> {};

TEST_P(MetricOracle, RatesEqualNaiveLoopExactly) {
  const int seed = GetParam();
  Rng rng(seed, stream::kData);
  auto spec = fixtures::small_spec(5 + seed * 4);  // N = 36 .. 100
  const auto test = gen_synthetic(spec, rng);
  ASSERT_LE(test.size(), 100u);
  const auto m = fixtures::random_model(ModelSpec::mlp({8, 8, 1}, {16}, 4), seed);
  const auto trig = TriggerSpec::checkerboard(3);
  const Label target = static_cast<Label>(seed % 4);
  const auto eval = make_attack_eval_set(test, trig, target);

  std::size_t correct = 0, hits = 0, evaluated = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    correct += naive_predict(m, test.image(i), test.sample_shape()) == test.labels[i];
    if (test.labels[i] == target) continue;
    const Tensor trig_img = apply_trigger(
        Tensor(test.sample_shape(), std::vector<double>(test.image(i).begin(), test.image(i).end())),
        trig);
    hits += naive_predict(m, trig_img.values(), test.sample_shape()) == target;
    ++evaluated;
  }
  const auto rep = evaluate(m, test, eval);
  EXPECT_EQ(rep.clean.hits, correct);
  EXPECT_EQ(rep.clean.evaluated, test.size());
  EXPECT_EQ(rep.c_acc(), static_cast<double>(correct) / static_cast<double>(test.size()));
  EXPECT_EQ(rep.attack.hits, hits);
  EXPECT_EQ(rep.attack.evaluated, evaluated);
  EXPECT_EQ(rep.asr(), static_cast<double>(hits) / static_cast<double>(evaluated));
}

INSTANTIATE_TEST_SUITE_P(Fixtures, MetricOracle, ::testing::Range(1, 6));

TEST(Metrics, ArgmaxTiesPickLowestIndex) {
  Tensor z({2, 3}, std::vector<double>{1, 3, 3, 2, 2, 2});
  EXPECT_EQ(argmax_rows(z), (std::vector<Label>{1, 0}));
}

TEST(Metrics, EmptySetsRejected) {
  ModelSplit m(ModelSpec::mlp({8, 8, 1}, {4}, 4));
  ImageDataset empty;
  empty.images = Tensor({0, 8, 8, 1});
  try {
    clean_accuracy(m, empty);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_EQ(e.code(), "metrics.empty");
  }
}

TEST(Separation, HandComputedTwoClusters) {
  // a = {(0,0),(2,0)}, b = {(0,4),(2,4)}: centroids 4 apart, spreads 1.
  Tensor a({2, 2}, std::vector<double>{0, 0, 2, 0});
  Tensor b({2, 2}, std::vector<double>{0, 4, 2, 4});
  const auto r = separation_from_features(a, b);
  EXPECT_DOUBLE_EQ(r.inter_centroid_distance, 4.0);
  EXPECT_DOUBLE_EQ(r.mean_intra_spread, 1.0);
  EXPECT_DOUBLE_EQ(r.separation_ratio, 4.0);
  // Each point: in = 2, out = (4 + sqrt(20)) / 2.
  const double out = (4 + std::sqrt(20.0)) / 2;
  EXPECT_NEAR(r.silhouette, (out - 2) / out, 1e-15);
}

TEST(Separation, IdenticalClustersHaveNoSeparation) {
  Tensor a({3, 2}, std::vector<double>{0, 0, 1, 1, 2, 0});
  const auto r = separation_from_features(a, a);
  EXPECT_DOUBLE_EQ(r.inter_centroid_distance, 0.0);
  EXPECT_LT(r.silhouette, 0.0);
}

TEST(Separation, Errors) {
  EXPECT_THROW(separation_from_features(Tensor({1, 2}), Tensor({3, 2})), InputError);
  EXPECT_THROW(separation_from_features(Tensor({3, 2}), Tensor({3, 3})), InputError);
}

TEST(Pca, MatchesJacobiEigenOracle) {
  Rng rng(7);
  const std::size_t n = 60, d = 5;
  Tensor x({n, d});
  // Anisotropic cloud so the top two eigenvalues are well separated.
  const double scale[d] = {3.0, 1.5, 0.7, 0.3, 0.1};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x.at(i, j) = scale[j] * rng.normal() + 0.5 * rng.normal() * (j == 1);
  const auto r = pca_project(x, 2);
  ASSERT_EQ(r.components.size(), 2u);

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x.at(i, j) / n;
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = 0; q < d; ++q)
        cov[p][q] += (x.at(i, p) - mean[p]) * (x.at(i, q) - mean[q]) / (n - 1);
  std::vector<double> vals;
  std::vector<std::vector<double>> vecs;
  jacobi(cov, vals, vecs);
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return vals[a] > vals[b]; });

  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(r.variances[c], vals[idx[c]], 1e-8 * vals[idx[c]]);
    double align = 0.0;
    for (std::size_t j = 0; j < d; ++j) align += r.components[c][j] * vecs[j][idx[c]];
    EXPECT_NEAR(std::abs(align), 1.0, 1e-8);
    // Sign convention: largest-magnitude loading is positive.
    std::size_t big = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (std::abs(r.components[c][j]) > std::abs(r.components[c][big])) big = j;
    EXPECT_GT(r.components[c][big], 0.0);
  }
  // Coordinates are projections of centered rows.
  for (std::size_t i = 0; i < n; ++i) {
    double p = 0.0;
    for (std::size_t j = 0; j < d; ++j) p += (x.at(i, j) - mean[j]) * r.components[0][j];
    EXPECT_NEAR(r.coords.at(i, 0), p, 1e-10);
  }
}

TEST(Pca, RankDeficientInputFlagged) {
  Tensor x({10, 3});
  for (std::size_t i = 0; i < 10; ++i) {
    x.at(i, 0) = static_cast<double>(i);
    x.at(i, 1) = 2.0 * static_cast<double>(i);
  }
  const auto r = pca_project(x, 2);
  EXPECT_TRUE(r.rank_deficient);
  EXPECT_EQ(r.components.size(), 1u);
  EXPECT_EQ(r.coords.shape(), (Shape{10, 1}));
}

TEST(Pca, TooFewSamples) {
  EXPECT_THROW(pca_project(Tensor({2, 3}), 2), InputError);
}
