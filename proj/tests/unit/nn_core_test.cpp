#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "gradient_check.hpp"
#include "opu_test_access.hpp"
#include "opushield/errors.hpp"
#include "opushield/layers.hpp"
#include "opushield/model.hpp"
#include "test_util.hpp"

namespace opushield {
namespace {

using testing::random_labels;
using testing::random_tensor;

Dense dense(std::string name, std::size_t in, std::size_t out, std::vector<double> w, std::vector<double> b) {
  return Dense{std::move(name), in, out, Tensor({out, in}, std::move(w)), Tensor({out}, std::move(b))};
}

TEST(TensorTest, RejectsMismatchedStorage) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), InputError);
  Tensor t({2, 3});
  EXPECT_EQ(t.batch(), 2u);
  EXPECT_EQ(t.sample_size(), 3u);
}

TEST(KernelTest, DotMatchesLongDoubleReference) {
  Rng rng(1);
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 63u, 1000u}) {
    std::vector<double> a(n), b(n);
    long double ref = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(-1, 1);
      b[i] = rng.uniform(-1, 1);
      ref += static_cast<long double>(a[i]) * b[i];
    }
    EXPECT_NEAR(kernels::dot(a.data(), b.data(), n), static_cast<double>(ref), 1e-12) << n;
  }
}

TEST(KernelTest, AffineIsBatchIndependent) {
  Rng rng(2);
  const std::size_t rows = 13, cols = 37, batch = 9;
  const Tensor w = random_tensor({rows, cols}, rng);
  const Tensor b = random_tensor({rows}, rng);
  const Tensor x = random_tensor({batch, cols}, rng);
  std::vector<double> all(batch * rows);
  kernels::affine(w.data(), b.data(), rows, cols, x.data(), batch, all);
  for (std::size_t s = 0; s < batch; ++s) {
    std::vector<double> one(rows);
    kernels::affine(w.data(), b.data(), rows, cols, x.sample(s), 1, one);
    for (std::size_t r = 0; r < rows; ++r) EXPECT_EQ(one[r], all[s * rows + r]);
  }
}

TEST(ForwardTest, ZeroWeightsGiveZeroLogits) {
  Model m({4}, 3, {dense("fc", 4, 3, std::vector<double>(12, 0.0), {0, 0, 0})});
  Rng rng(3);
  const Tensor out = m.forward(random_tensor({5, 4}, rng));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(ForwardTest, IdentityLayerPassesInputThrough) {
  Model m({3}, 3, {dense("fc", 3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0})});
  const Tensor x({1, 3}, {0.25, -2.0, 7.5});
  EXPECT_EQ(m.forward(x), x);
}

TEST(ForwardTest, TwoLayerNetMatchesHandChainedProducts) {
  Rng rng(4);
  Dense a = Dense::make("a", 5, 4, rng);
  Dense b = Dense::make("b", 4, 3, rng);
  for (double& v : a.bias.data()) v = rng.uniform(-1, 1);
  for (double& v : b.bias.data()) v = rng.uniform(-1, 1);
  Model m({5}, 3, {a, Relu{}, b});
  const Tensor x = random_tensor({2, 5}, rng);
  const Tensor out = m.forward(x);
  for (std::size_t s = 0; s < 2; ++s) {
    std::vector<long double> h(4);
    for (std::size_t o = 0; o < 4; ++o) {
      long double acc = a.bias[o];
      for (std::size_t k = 0; k < 5; ++k) acc += static_cast<long double>(a.weight[o * 5 + k]) * x[s * 5 + k];
      h[o] = acc > 0 ? acc : 0;
    }
    for (std::size_t o = 0; o < 3; ++o) {
      long double acc = b.bias[o];
      for (std::size_t k = 0; k < 4; ++k) acc += static_cast<long double>(b.weight[o * 4 + k]) * h[k];
      EXPECT_NEAR(out[s * 3 + o], static_cast<double>(acc), 1e-13);
    }
  }
}

TEST(ForwardTest, ShapeMismatchIsAnInputError) {
  Model m({4}, 2, {dense("fc", 4, 2, std::vector<double>(8, 0.1), {0, 0})});
  EXPECT_THROW(m.forward(Tensor({1, 5})), InputError);
  EXPECT_THROW(Model({4}, 3, {dense("fc", 4, 2, std::vector<double>(8, 0.1), {0, 0})}), InputError);
}

TEST(ForwardTest, ConvolutionMatchesDirectLoops) {
  Rng rng(5);
  Conv2d c = Conv2d::make("c", 2, 3, 3, 2, 1, rng);
  for (double& v : c.bias.data()) v = rng.uniform(-1, 1);
  const Tensor x = random_tensor({2, 2, 7, 6}, rng);
  const Tensor out = layer_forward(c, x, nullptr);
  ASSERT_EQ(out.shape(), (Shape{2, 3, 4, 3}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t oy = 0; oy < 4; ++oy)
        for (std::size_t ox = 0; ox < 3; ++ox) {
          long double acc = c.bias[o];
          for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const long iy = static_cast<long>(oy * 2 + ky) - 1, ix = static_cast<long>(ox * 2 + kx) - 1;
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                acc += static_cast<long double>(c.weight[((o * 2 + i) * 3 + ky) * 3 + kx]) *
                       x[((b * 2 + i) * 7 + static_cast<std::size_t>(iy)) * 6 + static_cast<std::size_t>(ix)];
              }
          EXPECT_NEAR(out[((b * 3 + o) * 4 + oy) * 3 + ox], static_cast<double>(acc), 1e-13);
        }
}

TEST(ForwardTest, StandardizeGivesZeroMeanUnitVariance) {
  Rng rng(6);
  const Tensor x = random_tensor({3, 50}, rng, -4, 9);
  const Tensor y = layer_forward(Standardize{0.0}, x, nullptr);
  for (std::size_t b = 0; b < 3; ++b) {
    double mean = 0, var = 0;
    for (double v : y.sample(b)) mean += v;
    mean /= 50;
    for (double v : y.sample(b)) var += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var / 50, 1.0, 1e-12);
  }
}

TEST(ForwardTest, DeterministicAcrossRuns) {
  Model a = testing::random_gradcheck_model(7);
  Model b = testing::random_gradcheck_model(7);
  Rng rng(8);
  const Tensor x = random_tensor(Shape{3, a.input_shape()[0], a.input_shape()[1], a.input_shape()[2]}, rng);
  EXPECT_EQ(a.forward(x), b.forward(x));
}

TEST(CrossEntropyTest, UniformLogitsGiveLogC) {
  const Tensor logits({1, 7}, std::vector<double>(7, 0.3));
  const int y = 4;
  EXPECT_NEAR(cross_entropy(logits, std::span<const int>(&y, 1)).value, std::log(7.0), 1e-15);
}

TEST(CrossEntropyTest, LargeMarginIsNearlyZero) {
  const Tensor logits({1, 3}, {30.0, 0.0, 0.0});
  const int y = 0;
  const LossValue l = cross_entropy(logits, std::span<const int>(&y, 1));
  EXPECT_LT(l.value, 1e-10);
  EXPECT_GE(l.value, 0.0);
}

TEST(CrossEntropyTest, MatchesHighPrecisionFormula) {
  const Tensor logits({1, 3}, {1.0, 2.0, 3.0});
  const int y = 0;
  const long double expected = -std::log(std::exp(1.0L) / (std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L)));
  EXPECT_NEAR(cross_entropy(logits, std::span<const int>(&y, 1)).value, static_cast<double>(expected), 1e-15);
}

TEST(CrossEntropyTest, LabelOutOfRangeIsAnInputError) {
  const Tensor logits({1, 3});
  const int bad = 3;
  EXPECT_THROW(cross_entropy(logits, std::span<const int>(&bad, 1)), InputError);
  const int neg = -1;
  EXPECT_THROW(cross_entropy(logits, std::span<const int>(&neg, 1)), InputError);
}

TEST(CrossEntropyTest, SoftmaxSumsToOne) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor l = random_tensor({1, 10}, rng, -50, 50);
    double s = 0.0;
    for (double p : softmax(l.sample(0))) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(BackwardTest, GradientsMatchFiniteDifferencesOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Model m = testing::random_gradcheck_model(seed);
    Rng rng(1000 + seed);
    Shape xs{2};
    xs.insert(xs.end(), m.input_shape().begin(), m.input_shape().end());
    const Tensor x = random_tensor(xs, rng);
    const auto y = random_labels(2, m.num_classes(), rng);
    const auto r = testing::check_bp_gradients(m, x, y);
    EXPECT_LT(r.worst_param, 1e-4) << "seed " << seed;
    EXPECT_LT(r.worst_input, 1e-4) << "seed " << seed;
  }
}

TEST(BackwardTest, ZeroWeightLinearModelOnlyHasBiasGradient) {
  Model m({3}, 2, {dense("fc", 3, 2, std::vector<double>(6, 0.0), {0, 0})});
  const Tensor x({1, 3}, {0.0, 0.0, 0.0});
  const int y = 1;
  const LossValue l = backward_bp(m, x, std::span<const int>(&y, 1));
  for (double v : l.param_grads.at("fc.weight").data()) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(l.param_grads.at("fc.bias")[0], 0.5, 1e-15);
  EXPECT_NEAR(l.param_grads.at("fc.bias")[1], -0.5, 1e-15);
}

TEST(BackwardTest, SaturatedCorrectPredictionHasZeroInputGradient) {
  Model m({2}, 2, {dense("fc", 2, 2, {1, 0, 0, 1}, {1000, 0})});
  const Tensor x({1, 2}, {0.3, -0.2});
  const int y = 0;
  const LossValue l = backward_bp(m, x, std::span<const int>(&y, 1));
  for (double v : l.input_grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(BackwardTest, ExactGradientThroughOpticalLayerIsBlocked) {
  Rng rng(10);
  OpuConfig oc{4, 6, 1};
  Model m({3}, 2, {Dense::make("fc1", 3, 4, rng), OpuLayer(oc), Dense::make("fc3", 6, 2, rng)});
  const Tensor x = random_tensor({1, 3}, rng);
  const int y = 0;
  EXPECT_THROW(backward_bp(m, x, std::span<const int>(&y, 1)), BlockedPathError);
}

TEST(BackwardTest, PassThroughSlotIsDifferentiable) {
  Rng rng(11);
  OpuConfig oc{4, 4, 1, 0.0, Binarization::None, Projection::None};
  Model m({3}, 2, {Dense::make("fc1", 3, 4, rng), OpuLayer(oc), Dense::make("fc3", 4, 2, rng)});
  const Tensor x = random_tensor({2, 3}, rng);
  const std::vector<int> y{0, 1};
  const auto r = testing::check_bp_gradients(m, x, y);
  EXPECT_LT(r.worst_param, 1e-4);
  EXPECT_LT(r.worst_input, 1e-4);
}

TEST(SgdTest, ZeroLearningRateLeavesModelUnchanged) {
  Model m = testing::random_gradcheck_model(12);
  const Model before = m;
  Rng rng(13);
  Shape xs{2};
  xs.insert(xs.end(), m.input_shape().begin(), m.input_shape().end());
  const auto y = random_labels(2, m.num_classes(), rng);
  const LossValue l = backward_bp(m, random_tensor(xs, rng), y);
  sgd_step(m, l.param_grads, 0.0);
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    EXPECT_EQ(*m.parameters()[i].value, *before.parameters()[i].value);
  }
}

TEST(SgdTest, ScalarArithmetic) {
  Model m({1}, 1, {dense("p", 1, 1, {1.0}, {0.0})});
  sgd_step(m, {{"p.weight", Tensor({1, 1}, {2.0})}}, 0.1);
  EXPECT_DOUBLE_EQ((*m.parameters()[0].value)[0], 0.8);
}

TEST(SgdTest, UnknownOrMisshapenGradientIsAnInputError) {
  Model m({1}, 1, {dense("p", 1, 1, {1.0}, {0.0})});
  EXPECT_THROW(sgd_step(m, {{"q.weight", Tensor({1, 1}, {2.0})}}, 0.1), InputError);
  EXPECT_THROW(sgd_step(m, {{"p.weight", Tensor({2}, {2.0, 1.0})}}, 0.1), InputError);
}

TEST(SgdTest, OpticalMatrixIsNeverUpdated) {
  Rng rng(14);
  OpuConfig oc{4, 6, 77};
  Model m({3}, 2, {Dense::make("fc1", 3, 4, rng), OpuLayer(oc), Dense::make("fc3", 6, 2, rng)});
  const ComplexGaussianMatrix before = OpuTestAccess::matrix(*m.opu());
  ParamGrads g;
  for (const auto& p : m.parameters()) g.emplace(p.name, random_tensor(p.value->shape(), rng));
  for (int i = 0; i < 5; ++i) sgd_step(m, g, 0.5);
  EXPECT_EQ(OpuTestAccess::matrix(*m.opu()), before);
}

TEST(ModelTest, RejectsSecondSlotAndNonDenseInjection) {
  Rng rng(15);
  OpuConfig oc{4, 4, 1};
  EXPECT_THROW(Model({4}, 4, {OpuLayer(oc)}), InputError);
  EXPECT_THROW(Model({3}, 4, {Dense::make("a", 3, 4, rng), OpuLayer(oc), Relu{}, OpuLayer(oc)}), InputError);
  Model ok({3}, 4, {Dense::make("a", 3, 4, rng), OpuLayer(oc)});
  EXPECT_EQ(ok.slot_index(), std::optional<std::size_t>(1));
  EXPECT_EQ(ok.injection_index(), std::optional<std::size_t>(0));
}

}  // namespace
}  // namespace opushield
