#include <cstring>
#include <filesystem>

#include <gtest/gtest.h>

#include "opu_test_access.hpp"
#include "opushield/checkpoint.hpp"
#include "opushield/errors.hpp"
#include "opushield/variants.hpp"
#include "test_util.hpp"

namespace opushield {
namespace {

Architecture small_arch() {
  Architecture a;
  a.input_shape = {1, 8, 8};
  a.num_classes = 4;
  a.conv_channels = {2, 3};
  a.hidden = 12;
  a.projected = 20;
  return a;
}

Model small_model(Variant v) {
  Model m = build_model(VariantSpec{v, small_arch(), 5, 6});
  if (m.slot_index()) {
    const auto& inj = std::get<Dense>(m.layers()[*m.injection_index()]);
    m.set_feedback(FeedbackMatrix(inj.out, 4, 7));
  }
  return m;
}

void expect_same_model(const Model& a, const Model& b) {
  EXPECT_EQ(a.input_shape(), b.input_shape());
  EXPECT_EQ(a.num_classes(), b.num_classes());
  EXPECT_EQ(a.training_method(), b.training_method());
  EXPECT_EQ(a.feedback(), b.feedback());
  ASSERT_EQ(a.layers().size(), b.layers().size());
  for (std::size_t i = 0; i < a.layers().size(); ++i) EXPECT_EQ(layer_kind(a.layers()[i]), layer_kind(b.layers()[i]));
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(*pa[i].value, *pb[i].value) << pa[i].name;
  }
  if (a.opu()) {
    ASSERT_NE(b.opu(), nullptr);
    EXPECT_EQ(a.opu()->config(), b.opu()->config());
    if (a.opu()->config().projection == Projection::Random) {
      EXPECT_EQ(OpuTestAccess::matrix(*a.opu()), OpuTestAccess::matrix(*b.opu()));
    }
  }
}

std::uint64_t decode_offset(const std::string& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "expected a parse error";
  return 0;
}

TEST(CheckpointTest, EveryVariantRoundTripsBitExactly) {
  Rng rng(1);
  const Tensor x = testing::random_tensor({3, 1, 8, 8}, rng);
  for (Variant v : all_variants()) {
    const Model m = small_model(v);
    CheckpointMeta meta{{"variant", to_string(v)}, {"seed", "5"}};
    const std::string bytes = encode_checkpoint(m, meta);
    CheckpointMeta back_meta;
    const Model back = decode_checkpoint(bytes, &back_meta);
    SCOPED_TRACE(to_string(v));
    expect_same_model(m, back);
    EXPECT_EQ(back_meta, meta);
    EXPECT_EQ(m.forward(x), back.forward(x));
    EXPECT_EQ(encode_checkpoint(back, meta), bytes);
  }
}

TEST(CheckpointTest, ExplicitFeedbackValuesPersist) {
  Model m = small_model(Variant::DfaOpu);
  Rng rng(2);
  std::vector<double> b(12 * 4);
  for (double& v : b) v = rng.normal();
  m.set_feedback(FeedbackMatrix(12, 4, b));
  const Model back = decode_checkpoint(encode_checkpoint(m));
  EXPECT_EQ(back.feedback(), m.feedback());
  EXPECT_TRUE(back.feedback()->explicit_values());
}

TEST(CheckpointTest, OpticalMatrixIsNeverWritten) {
  const Model m = small_model(Variant::DfaOpu);
  const std::string bytes = encode_checkpoint(m);
  const auto& u = OpuTestAccess::matrix(*m.opu());
  for (std::size_t k = 0; k < 8; ++k) {
    char needle[sizeof(double)];
    std::memcpy(needle, &u.real()[k], sizeof needle);
    EXPECT_EQ(bytes.find(std::string(needle, sizeof needle)), std::string::npos);
    std::memcpy(needle, &u.imag()[k], sizeof needle);
    EXPECT_EQ(bytes.find(std::string(needle, sizeof needle)), std::string::npos);
  }
}

TEST(CheckpointTest, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "opushield_checkpoint_test";
  std::filesystem::remove_all(dir);
  const Model m = small_model(Variant::DfaRp);
  save_checkpoint(m, dir / "nested" / "m.ckpt", {{"k", "v"}});
  CheckpointMeta meta;
  expect_same_model(m, load_checkpoint(dir / "nested" / "m.ckpt", &meta));
  EXPECT_EQ(meta.at("k"), "v");
  std::filesystem::remove_all(dir);
}

TEST(CheckpointTest, MalformedInputsReportOffsets) {
  const std::string good = encode_checkpoint(small_model(Variant::Dfa));
  EXPECT_EQ(decode_offset(good.substr(0, 10)), 10u);

  std::string bad = good;
  bad[0] = 'X';
  EXPECT_EQ(decode_offset(bad), 0u);

  bad = good;
  bad[8] = 9;
  EXPECT_EQ(decode_offset(bad), 8u);

  EXPECT_EQ(decode_offset(good.substr(0, 40)), 40u);

  bad = good;
  bad[20] = '#';
  EXPECT_GE(decode_offset(bad), 20u);

  EXPECT_EQ(decode_offset(good.substr(0, good.size() - 3)), good.size() - 3);
  EXPECT_EQ(decode_offset(good + "xyz"), good.size());
}

TEST(VariantTest, NamesRoundTrip) {
  for (Variant v : all_variants()) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_EQ(to_string(Variant::DfaOpu), "DFA+OPU");
  EXPECT_THROW(parse_variant("OPU"), InputError);
}

TEST(VariantTest, OpuIsBinarizationPlusProjection) {
  EXPECT_TRUE(uses_binarization(Variant::DfaOpu) && uses_projection(Variant::DfaOpu));
  EXPECT_TRUE(uses_binarization(Variant::DfaBin) && !uses_projection(Variant::DfaBin));
  EXPECT_TRUE(!uses_binarization(Variant::DfaRp) && uses_projection(Variant::DfaRp));
  EXPECT_TRUE(!uses_binarization(Variant::Dfa) && !uses_projection(Variant::Dfa));
}

TEST(VariantTest, BuiltModelsHaveTheTaggedSlot) {
  for (Variant v : all_variants()) {
    const Model m = build_model(VariantSpec{v, small_arch(), 1, 2});
    SCOPED_TRACE(to_string(v));
    if (v == Variant::Vanilla) {
      EXPECT_FALSE(m.slot_index().has_value());
      EXPECT_EQ(m.training_method(), TrainingMethod::BP);
      continue;
    }
    ASSERT_TRUE(m.slot_index().has_value());
    EXPECT_EQ(m.training_method(), TrainingMethod::HybridDFA);
    const OpuConfig& c = m.opu()->config();
    EXPECT_EQ(c.binarization == Binarization::Sign, uses_binarization(v));
    EXPECT_EQ(c.projection == Projection::Random, uses_projection(v));
    EXPECT_EQ(c.output_dim, uses_projection(v) ? 20u : 12u);
    EXPECT_EQ(c.seed, 2u);
    EXPECT_EQ(layer_kind(m.layers()[*m.injection_index()]), "dense");
  }
}

TEST(VariantTest, SameSeedsBuildIdenticalModels) {
  const Model a = build_model(VariantSpec{Variant::DfaOpu, small_arch(), 3, 4});
  const Model b = build_model(VariantSpec{Variant::DfaOpu, small_arch(), 3, 4});
  expect_same_model(a, b);
}

TEST(VariantTest, InvalidArchitectureIsRejected) {
  Architecture a = small_arch();
  a.hidden = 0;
  EXPECT_THROW(build_model(VariantSpec{Variant::Dfa, a, 1, 1}), InputError);
  a = small_arch();
  a.conv_channels = {2, 3, 4, 5};  // 8 -> 4 -> 2 -> 1 -> 0
  EXPECT_THROW(build_model(VariantSpec{Variant::Dfa, a, 1, 1}), InputError);
}

}  // namespace
}  // namespace opushield
