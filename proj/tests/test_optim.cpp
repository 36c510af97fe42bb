#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace fstlab;

namespace {

// One dense layer 2 -> 2, no hidden layers: small enough to step by hand.
ModelSplit tiny() {
  ModelSpec s;
  s.input_shape = {2};
  s.class_count = 2;
  s.head = {LayerSpec::dense(2, 2)};
  ModelSplit m(s);
  m.param(0) = Tensor({2, 2}, std::vector<double>{0.1, -0.2, 0.3, 0.4});
  m.param(1) = Tensor({2}, std::vector<double>{0.0, 0.1});
  return m;
}

GradientSet constant_grads(const ModelSplit& m, double v) {
  GradientSet g;
  for (const auto& p : m.registry()) {
    g.keys.push_back(p.key);
    g.grads.emplace_back(p.shape, v);
  }
  return g;
}

}  // namespace

TEST(Optim, SgdMomentumByHand) {
  ModelSplit m = tiny();
  auto st = OptimizerState::for_model(m, 0.1, 0.9);
  const auto g = constant_grads(m, 1.0);
  sgd_step(m, g, st);
  // v = 1, p -= 0.1
  EXPECT_NEAR(m.param(0)[0], 0.0, 1e-15);
  sgd_step(m, g, st);
  // v = 0.9 + 1 = 1.9, p -= 0.19
  EXPECT_NEAR(m.param(0)[0], -0.19, 1e-15);
  EXPECT_NEAR(st.velocity[0][0], 1.9, 1e-15);
}

TEST(Optim, GroupRestrictsUpdates) {
  ModelSplit m = fixtures::random_model(ModelSpec::mlp({2, 2, 1}, {3}, 2), 1);
  const auto ext = m.checksum(Side::Extractor);
  auto st = OptimizerState::for_model(m, 0.1, 0.9);
  sgd_step(m, constant_grads(m, 1.0), st, ParamGroup::HeadOnly);
  EXPECT_EQ(m.checksum(Side::Extractor), ext);
  const auto head = m.checksum(Side::Head);
  sgd_step(m, constant_grads(m, 1.0), st, ParamGroup::ExtractorOnly);
  EXPECT_EQ(m.checksum(Side::Head), head);
  EXPECT_NE(m.checksum(Side::Extractor), ext);
}

TEST(Optim, RejectsBadHyperparameters) {
  ModelSplit m = tiny();
  EXPECT_THROW(OptimizerState::for_model(m, 0.0, 0.9), InputError);
  EXPECT_THROW(OptimizerState::for_model(m, 0.1, 1.0), InputError);
}

TEST(Optim, RejectsMisalignedGradients) {
  ModelSplit m = tiny();
  auto st = OptimizerState::for_model(m, 0.1, 0.0);
  auto g = constant_grads(m, 1.0);
  std::swap(g.keys[0], g.keys[1]);
  try {
    sgd_step(m, g, st);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.code(), "grad.registry");
  }
}

// SAM with zero momentum, checked against an explicit two-gradient oracle.
TEST(Optim, SamStepMatchesOracle) {
  ModelSplit m = tiny();
  const Tensor x({2, 2}, std::vector<double>{1.0, 0.5, -0.3, 0.8});
  const std::vector<Label> y{1, 0};
  const double rho = 0.05, lr = 0.2;

  ModelSplit oracle = m;
  const auto g1 = backward(oracle, x, y).grads;
  double sq = 0.0;
  for (const auto& t : g1.grads) sq += dot(t.values(), t.values());
  const double scale = rho / std::sqrt(sq);
  ModelSplit perturbed = oracle;
  for (std::size_t i = 0; i < perturbed.registry().size(); ++i)
    for (std::size_t j = 0; j < perturbed.param(i).size(); ++j)
      perturbed.param(i)[j] += scale * g1.grads[i][j];
  const auto g2 = backward(perturbed, x, y).grads;
  for (std::size_t i = 0; i < oracle.registry().size(); ++i)
    for (std::size_t j = 0; j < oracle.param(i).size(); ++j)
      oracle.param(i)[j] -= lr * g2.grads[i][j];

  auto st = OptimizerState::for_model(m, lr, 0.0);
  const double loss = sam_step(m, x, y, rho, st);
  EXPECT_DOUBLE_EQ(loss, cross_entropy(forward_logits(tiny(), x), y));
  for (std::size_t i = 0; i < m.registry().size(); ++i)
    for (std::size_t j = 0; j < m.param(i).size(); ++j)
      EXPECT_NEAR(m.param(i)[j], oracle.param(i)[j], 1e-15);
}

TEST(Optim, SamWithZeroRhoIsSgd) {
  ModelSplit a = tiny(), b = tiny();
  const Tensor x({1, 2}, std::vector<double>{1.0, 2.0});
  const std::vector<Label> y{0};
  auto sa = OptimizerState::for_model(a, 0.1, 0.9);
  auto sb = OptimizerState::for_model(b, 0.1, 0.9);
  sam_step(a, x, y, 0.0, sa);
  sgd_step(b, backward(b, x, y).grads, sb);
  EXPECT_EQ(a.checksum(), b.checksum());
}

TEST(Optim, SamNegativeRhoRejected) {
  ModelSplit m = tiny();
  auto st = OptimizerState::for_model(m, 0.1, 0.9);
  EXPECT_THROW(sam_step(m, Tensor({1, 2}), std::vector<Label>{0}, -1.0, st), InputError);
}

TEST(Optim, SamFrozenSideUntouched) {
  ModelSplit m = fixtures::random_model(ModelSpec::mlp({2, 2, 1}, {3}, 2), 3);
  Rng rng(1);
  const Tensor x = fixtures::random_batch(4, {2, 2, 1}, rng);
  const auto y = fixtures::random_labels(4, 2, rng);
  const auto ext = m.checksum(Side::Extractor);
  auto st = OptimizerState::for_model(m, 0.1, 0.9);
  sam_step(m, x, y, 0.5, st, ParamGroup::HeadOnly);
  EXPECT_EQ(m.checksum(Side::Extractor), ext);
}
