#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "opu_reference.hpp"
#include "opu_test_access.hpp"
#include "opushield/errors.hpp"
#include "opushield/opu.hpp"
#include "test_util.hpp"

namespace opushield {
namespace {

using testing::random_tensor;
using testing::reference_forward;

TEST(BinarizeTest, ThresholdAtZeroWithTieHigh) {
  const std::vector<double> x{0.5, -0.2, 0.0};
  EXPECT_EQ(binarize(x).bits, (std::vector<std::int8_t>{1, -1, 1}));
  const std::vector<double> neg_zero{-0.0};
  EXPECT_EQ(binarize(neg_zero).bits[0], 1);
}

TEST(BinarizeTest, PositiveScaleInvariantAndIdempotent) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const Tensor x = random_tensor({40}, rng);
    const double c = rng.uniform(1e-3, 1e3);
    std::vector<double> scaled(x.data().begin(), x.data().end());
    for (double& v : scaled) v *= c;
    const BinaryVector b = binarize(x.data());
    EXPECT_EQ(binarize(scaled).bits, b.bits);
    EXPECT_EQ(binarize(b.as_reals()).bits, b.bits);
  }
}

TEST(OpuForwardTest, UnitMatrixGivesUnitOutput) {
  const OpuLayer layer = OpuTestAccess::with_matrix(OpuConfig{1, 1, 0}, ComplexGaussianMatrix(1, 1, {1.0}, {0.0}));
  EXPECT_EQ(layer.forward(Tensor({1, 1}, {3.0}))[0], 1.0);
}

TEST(OpuForwardTest, ZeroMatrixGivesZeroOutput) {
  const OpuLayer layer =
      OpuTestAccess::with_matrix(OpuConfig{3, 2, 0}, ComplexGaussianMatrix(2, 3, std::vector<double>(6), std::vector<double>(6)));
  const Tensor m = layer.forward(Tensor({1, 3}, {0.1, -4.0, 2.0}));
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(OpuForwardTest, SeededFourByThreeMatchesComplexReference) {
  const OpuLayer layer(OpuConfig{3, 4, 2024});
  const Tensor x({1, 3}, {0.7, -0.1, 0.0});
  const Tensor m = layer.forward(x);
  const auto ref = reference_forward(OpuTestAccess::matrix(layer), x.sample(0));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(m[j], ref[j], 1e-12);
}

TEST(OpuForwardTest, MatchesComplexReferenceOnRandomPairs) {
  Rng dims(3);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const std::size_t n = 1 + dims.below(128);
    const std::size_t m = 1 + dims.below(64);
    const OpuLayer layer(OpuConfig{n, m, seed});
    Rng rng(seed + 7);
    const Tensor x = random_tensor({1, n}, rng);
    const Tensor out = layer.forward(x);
    const auto ref = reference_forward(OpuTestAccess::matrix(layer), x.sample(0));
    for (std::size_t j = 0; j < m; ++j) worst = std::max(worst, std::abs(out[j] - ref[j]));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(OpuForwardTest, OutputIsNonnegative) {
  Rng rng(4);
  const OpuLayer layer(OpuConfig{30, 50, 9});
  const Tensor out = layer.forward(random_tensor({20, 30}, rng));
  for (double v : out.data()) EXPECT_GE(v, 0.0);
}

TEST(OpuForwardTest, DimensionMismatchIsAnInputError) {
  const OpuLayer layer(OpuConfig{3, 4, 1});
  EXPECT_THROW(layer.forward(Tensor({1, 4})), InputError);
}

TEST(OpuForwardTest, RowPermutationPermutesOutput) {
  const std::size_t n = 12, m = 9;
  const ComplexGaussianMatrix u = ComplexGaussianMatrix::generate(m, n, 0.3, 5);
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(6);
  for (std::size_t i = m; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<double> re(m * n), im(m * n);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      re[j * n + k] = u.real()[perm[j] * n + k];
      im[j * n + k] = u.imag()[perm[j] * n + k];
    }
  }
  const OpuLayer a = OpuTestAccess::with_matrix(OpuConfig{n, m, 0}, u);
  const OpuLayer b = OpuTestAccess::with_matrix(OpuConfig{n, m, 0}, ComplexGaussianMatrix(m, n, re, im));
  const Tensor x = random_tensor({3, n}, rng);
  const Tensor ma = a.forward(x), mb = b.forward(x);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t j = 0; j < m; ++j) EXPECT_EQ(mb[s * m + j], ma[s * m + perm[j]]);
  }
}

TEST(OpuForwardTest, InvariantUnderPositiveRescaling) {
  Rng rng(7);
  const OpuLayer layer(OpuConfig{25, 40, 8});
  const Tensor x = random_tensor({4, 25}, rng);
  Tensor scaled = x;
  for (double& v : scaled.data()) v *= 17.5;
  EXPECT_EQ(layer.forward(x), layer.forward(scaled));
}

TEST(OpuForwardTest, MeanOutputMatchesTwoNSigmaSquared) {
  // E[m_j] = 2 N sigma^2 for sign input; averaged over many independent draws.
  const std::size_t n = 16, m = 1;
  const double sigma = 0.37;
  Rng rng(9);
  double sum = 0.0;
  const int draws = 20000;
  for (int d = 0; d < draws; ++d) {
    const OpuLayer layer(OpuConfig{n, m, static_cast<std::uint64_t>(d), sigma});
    sum += layer.forward(random_tensor({1, n}, rng))[0];
  }
  const double expected = 2.0 * n * sigma * sigma;
  EXPECT_NEAR(sum / draws, expected, 0.05 * expected);
}

TEST(OpuForwardTest, DefaultScaleGivesUnitMeanOutput) {
  const OpuConfig cfg{64, 4000, 10};
  EXPECT_DOUBLE_EQ(cfg.resolved_scale(), 1.0 / std::sqrt(128.0));
  Rng rng(11);
  const Tensor m = OpuLayer(cfg).forward(random_tensor({1, 64}, rng));
  EXPECT_NEAR(std::accumulate(m.data().begin(), m.data().end(), 0.0) / 4000.0, 1.0, 0.05);
}

TEST(OpuForwardTest, BatchedEqualsOneAtATime) {
  Rng rng(12);
  const OpuLayer layer(OpuConfig{33, 70, 13});
  const Tensor x = random_tensor({11, 33}, rng);
  const Tensor all = layer.forward(x);
  for (std::size_t s = 0; s < 11; ++s) {
    const Tensor one = layer.forward(single_sample(x.sample(s), {33}));
    for (std::size_t j = 0; j < 70; ++j) EXPECT_EQ(one[j], all[s * 70 + j]);
  }
}

TEST(OpuMatrixTest, RegenerationIsBitExact) {
  const OpuLayer a(OpuConfig{20, 30, 99, 0.2});
  const OpuLayer b(OpuConfig{20, 30, 99, 0.2});
  EXPECT_EQ(OpuTestAccess::matrix(a), OpuTestAccess::matrix(b));
}

TEST(OpuMatrixTest, ResampleWithSameSeedIsIdenticalAndNewSeedDiffers) {
  Rng rng(14);
  const OpuLayer layer(OpuConfig{20, 30, 1});
  const OpuLayer same = layer.resample(1);
  const OpuLayer other = layer.resample(2);
  EXPECT_EQ(OpuTestAccess::matrix(same), OpuTestAccess::matrix(layer));
  EXPECT_FALSE(OpuTestAccess::matrix(other) == OpuTestAccess::matrix(layer));
  EXPECT_EQ(other.config().entry_scale, layer.config().entry_scale);
  EXPECT_EQ(other.output_dim(), layer.output_dim());
  const Tensor probe = random_tensor({1, 20}, rng);
  EXPECT_FALSE(layer.forward(probe) == other.forward(probe));
}

// The attack-facing surface offers no way to read the matrix.
template <class T>
concept ExposesMatrix = requires(const T& t) { t.matrix(); } || requires(const T& t) { t.matrix_; } ||
                        requires(const T& t) { t.real(); } || requires(const T& t) { t.weights(); };

TEST(OpuMatrixTest, PublicSurfaceDoesNotExposeTheMatrix) {
  static_assert(!ExposesMatrix<OpuLayer>);
  static_assert(!std::is_constructible_v<OpuLayer, OpuConfig, std::shared_ptr<const ComplexGaussianMatrix>>);
}

TEST(OpuConfigTest, Validation) {
  EXPECT_THROW(OpuLayer(OpuConfig{0, 3, 1}), InputError);
  EXPECT_THROW(OpuLayer(OpuConfig{3, 4, 1, -1.0}), InputError);
  EXPECT_THROW(OpuLayer(OpuConfig{3, 4, 1, 0.0, Binarization::Sign, Projection::None}), InputError);
  EXPECT_EQ(parse_quantization("8bit"), Quantization::Bits8);
  EXPECT_THROW(parse_quantization("4bit"), InputError);
}

TEST(OpuAblationTest, StagesCanBeSwitchedOff) {
  const Tensor x({1, 3}, {0.5, -2.0, 0.0});
  const OpuLayer identity(OpuConfig{3, 3, 1, 0.0, Binarization::None, Projection::None});
  EXPECT_TRUE(identity.is_identity());
  EXPECT_EQ(identity.forward(x), x);
  const OpuLayer sign_only(OpuConfig{3, 3, 1, 0.0, Binarization::Sign, Projection::None});
  EXPECT_EQ(sign_only.forward(x), Tensor({1, 3}, {1.0, -1.0, 1.0}));
  const OpuLayer rp(OpuConfig{3, 5, 1, 0.0, Binarization::None, Projection::Random});
  const Tensor doubled({1, 3}, {1.0, -4.0, 0.0});
  const Tensor a = rp.forward(x), b = rp.forward(doubled);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(b[j], 4.0 * a[j], 1e-12);
}

TEST(QuantizeTest, ZeroVectorGivesZeroCodes) {
  const std::vector<double> m(5, 0.0);
  const Quantized8 q = quantize8(m);
  for (auto c : q.codes) EXPECT_EQ(c, 0);
}

TEST(QuantizeTest, EndpointsOfLinearMap) {
  const std::vector<double> m{3.0, 1.5};
  const Quantized8 q = quantize8(m);
  EXPECT_EQ(q.codes[0], 255);
  EXPECT_EQ(q.codes[1], 128);  // 127.5 rounds half away from zero
}

TEST(QuantizeTest, RoundTripWithinOneStepAndMonotone) {
  Rng rng(15);
  for (int t = 0; t < 20; ++t) {
    const Tensor m = random_tensor({64}, rng, 0.0, 10.0);
    const Quantized8 q = quantize8(m.data());
    const auto back = dequantize8(q);
    for (std::size_t i = 0; i < 64; ++i) {
      EXPECT_LE(std::abs(back[i] - m[i]), q.scale);
      for (std::size_t k = 0; k < 64; ++k) {
        if (m[i] < m[k]) {
          EXPECT_LE(q.codes[i], q.codes[k]);
        }
      }
    }
  }
}

TEST(QuantizeTest, NegativeInputIsAnInputError) {
  const std::vector<double> m{1.0, -0.1};
  EXPECT_THROW(quantize8(m), InputError);
}

TEST(QuantizeTest, EnabledLayerOutputsQuantizedLevels) {
  Rng rng(16);
  OpuConfig cfg{10, 20, 3};
  cfg.quantize = Quantization::Bits8;
  const Tensor x = random_tensor({1, 10}, rng);
  const Tensor q = OpuLayer(cfg).forward(x);
  cfg.quantize = Quantization::Off;
  const Tensor raw = OpuLayer(cfg).forward(x);
  const double peak = *std::max_element(raw.data().begin(), raw.data().end());
  for (std::size_t j = 0; j < 20; ++j) {
    EXPECT_LE(std::abs(q[j] - raw[j]), peak / 255.0);
    const double code = q[j] / (peak / 255.0);
    EXPECT_NEAR(code, std::round(code), 1e-9);
  }
}

TEST(SurrogateTest, TrueMatrixAndSteepTanhReproduceForward) {
  Rng rng(17);
  const OpuConfig cfg{24, 40, 5};
  const OpuLayer layer(cfg);
  const SurrogateOpu surrogate(cfg, 1e4, OpuTestAccess::matrix(layer));
  Tensor x = random_tensor({5, 24}, rng);
  for (double& v : x.data()) v += v >= 0 ? 0.05 : -0.05;  // keep away from the threshold
  const Tensor a = layer.forward(x), b = surrogate.forward(x, nullptr);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(SurrogateTest, GradientMatchesFiniteDifferences) {
  Rng rng(18);
  for (auto [bin, proj] : {std::pair{Binarization::Sign, Projection::Random},
                           std::pair{Binarization::None, Projection::Random},
                           std::pair{Binarization::Sign, Projection::None}}) {
    OpuConfig cfg{7, proj == Projection::Random ? 11u : 7u, 3, 0.0, bin, proj};
    const SurrogateOpu s(cfg, 2.0, 44);
    Tensor x = random_tensor({2, 7}, rng);
    const Tensor r = random_tensor({2, cfg.output_dim}, rng);
    std::vector<Tensor> cache;
    s.forward(x, &cache);
    const Tensor g = s.backward(x, cache, r);
    auto f = [&] {
      const Tensor out = s.forward(x, nullptr);
      return kernels::dot(out.data().data(), r.data().data(), out.size());
    };
    const auto fd = testing::central_difference(f, x.data());
    for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_LT(testing::rel_error(g[i], fd[i], 1e-3), 1e-4);
  }
}

TEST(SurrogateTest, FreshSeedDrawsADifferentMatrix) {
  const OpuConfig cfg{6, 8, 1};
  const OpuLayer layer(cfg);
  const SurrogateOpu s(cfg, 10.0, 2);
  EXPECT_FALSE(*s.matrix() == OpuTestAccess::matrix(layer));
  EXPECT_EQ(*s.matrix(), ComplexGaussianMatrix::generate(8, 6, cfg.resolved_scale(), 2));
}

}  // namespace
}  // namespace opushield
