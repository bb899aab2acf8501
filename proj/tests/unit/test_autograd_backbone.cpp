#include <gtest/gtest.h>

#include <cmath>

#include "fsvfm/autograd.hpp"
#include "fsvfm/backbone.hpp"
#include "fsvfm/errors.hpp"
#include "test_support.hpp"

using namespace fsvfm;
using fsvfm::testing::grad_check;
using fsvfm::testing::random_matrix;

namespace {
ag::Tensor param(Rng& rng, Index r, Index c, double s = 1.0) { return ag::leaf(random_matrix(rng, r, c, s), true); }

// Contract a tensor to a scalar with fixed random weights so every output
// entry carries a distinct upstream gradient.
ag::Tensor contract(const ag::Tensor& y, std::uint64_t seed) {
  Rng r(seed);
  const Matrix w = random_matrix(r, y.rows(), y.cols());
  return ag::sum_squares(ag::add(y, ag::constant(w)));
}
}  // namespace

TEST(Autograd, ConstantInputsBuildNoGraph) {
  ag::Tensor a = ag::constant(Matrix::Ones(2, 2));
  ag::Tensor b = ag::leaf(Matrix::Ones(2, 2), false);
  ag::Tensor y = ag::matmul(a, b);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->inputs.empty());
  ag::Tensor w = ag::leaf(Matrix::Ones(2, 2), true);
  EXPECT_TRUE(ag::matmul(a, w).requires_grad());
}

TEST(Autograd, GradientsAccumulateOverSharedUses) {
  ag::Tensor x = ag::leaf(Matrix::Constant(1, 1, 3.0), true);
  ag::backward(ag::add(ag::sum_squares(x), ag::scale(x, 2.0)));  // x^2 + 2x
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 8.0);
}

TEST(AutogradGradCheck, ElementwiseAndLinearOps) {
  Rng rng(1);
  ag::Tensor x = param(rng, 5, 6), w = param(rng, 6, 4), b = param(rng, 1, 4);
  ag::Tensor g = param(rng, 1, 6), be = param(rng, 1, 6);
  auto loss = [&] {
    ag::Tensor h = ag::layer_norm(x, g, be, 1e-6);
    h = ag::gelu(ag::linear(h, w, b));
    h = ag::add(h, ag::scale(ag::relu(h), 0.5));
    return contract(ag::l2_normalize_rows(h, 1e-12), 3);
  };
  const auto r = grad_check(loss, {{"x", x}, {"w", w}, {"b", b}, {"g", g}, {"be", be}}, rng, 12);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(AutogradGradCheck, AttentionAndRowOps) {
  Rng rng(2);
  ag::Tensor q = param(rng, 5, 8), k = param(rng, 7, 8), v = param(rng, 7, 8), f = param(rng, 1, 8);
  auto loss = [&] {
    ag::Tensor a = ag::attention(q, k, v, 2);
    ag::Tensor s = ag::assemble_rows(a, f, {0, -1, 2, -1, 4});
    ag::Tensor c = ag::concat_cols({ag::slice_cols(s, 2, 3), ag::gather_rows(s, {4, 0, 0, 1, 3})});
    return contract(ag::concat_rows({c, ag::mean_rows(c, 1, 4)}), 4);
  };
  const auto r = grad_check(loss, {{"q", q}, {"k", k}, {"v", v}, {"f", f}}, rng, 12);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(AutogradGradCheck, CrossEntropy) {
  Rng rng(3);
  ag::Tensor logits = param(rng, 6, 3);
  auto loss = [&] { return ag::cross_entropy(logits, {0, 2, 1, 1, 0, 2}); };
  const auto r = grad_check(loss, {{"logits", logits}}, rng, 18);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
  // uniform logits: loss = log(classes)
  EXPECT_NEAR(ag::cross_entropy(ag::constant(Matrix::Zero(2, 4)), {0, 3}).item(), std::log(4.0), 1e-12);
}

TEST(Autograd, AttentionProbabilitiesAreRowStochastic) {
  Rng rng(4);
  std::vector<Matrix> probs;
  ag::attention(ag::constant(random_matrix(rng, 4, 8)), ag::constant(random_matrix(rng, 6, 8)),
                ag::constant(random_matrix(rng, 6, 8)), 4, &probs);
  ASSERT_EQ(probs.size(), 4u);
  for (const auto& p : probs) {
    ASSERT_EQ(p.rows(), 4);
    ASSERT_EQ(p.cols(), 6);
    for (Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
  }
}

// ---------------------------------------------------------------------------

TEST(Backbone, ProfilesValidate) {
  for (const char* n : {"micro", "tiny", "small", "base", "large"}) EXPECT_NO_THROW(ViTProfile::from_name(n).validate());
  EXPECT_EQ(ViTProfile::large().embed_dim, 1024);
  EXPECT_EQ(ViTProfile::large().depth, 24);
  EXPECT_THROW(ViTProfile::from_name("huge"), ConfigError);
  ViTProfile p = ViTProfile::micro();
  p.heads = 5;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Backbone, PatchifyRoundTrip) {
  SynthConfig c;
  c.n_real = 1;
  const Image img = generate_synthetic(c)[0].image;
  const Matrix patches = patchify_image(img, 8);
  ASSERT_EQ(patches.rows(), 64);
  ASSERT_EQ(patches.cols(), 192);
  EXPECT_EQ(unpatchify(patches, 8, 64, 64), img);
  // first row of patch 1 starts at pixel (0, 8)
  EXPECT_EQ(patches(1, 0), img.at(0, 8, 0));
  EXPECT_EQ(patches(8, 3 * 8), img.at(9, 0, 0));
  EXPECT_THROW(patchify_image(Image(10, 16), 8), ShapeError);
}

TEST(Backbone, SinCosTableShape) {
  const Matrix t = sincos_pos_table_2d(16, 4);
  ASSERT_EQ(t.rows(), 16);
  ASSERT_EQ(t.cols(), 16);
  // position 0: sin terms 0, cos terms 1
  for (Index k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(t(0, k), 0.0);
    EXPECT_DOUBLE_EQ(t(0, 4 + k), 1.0);
  }
  // rows in the same grid column share the column half
  EXPECT_EQ(t.row(1).head(8), t.row(5).head(8));
  EXPECT_THROW(sincos_pos_table_2d(10, 4), ShapeError);
}

class EncoderTest : public ::testing::Test {
 protected:
  EncoderTest() : profile(ViTProfile::micro()), init(7), enc(ps, "encoder", profile, init) {
    Rng r(8);
    patches = random_matrix(r, profile.n_patches(), profile.patch_dim());
  }
  ViTProfile profile;
  ParameterSet ps;
  Rng init;
  VisionEncoder enc;
  Matrix patches;
};

TEST_F(EncoderTest, SingleVisiblePatch) {
  std::vector<std::uint8_t> mask(64, 1);
  mask[0] = 0;
  const TokenSet t = enc.embed_visible(patches, mask);
  EXPECT_EQ(t.n_tokens(), 2);
  EXPECT_TRUE(t.has_cls);
  EXPECT_EQ(t.positions, std::vector<int>{0});
}

TEST_F(EncoderTest, NoMaskEqualsFullEmbedding) {
  const TokenSet a = enc.embed_visible(patches, std::vector<std::uint8_t>(64, 0));
  const TokenSet b = enc.embed_full(patches);
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_EQ(a.tokens.value(), b.tokens.value());
  const TokenSet ea = enc.encode(a), eb = enc.encode(b);
  EXPECT_EQ(ea.tokens.value(), eb.tokens.value());
  EXPECT_EQ(ea.tokens.rows(), 65);
  EXPECT_EQ(ea.tokens.cols(), profile.embed_dim);
}

TEST_F(EncoderTest, CaptureRecordsEveryBlockAndHead) {
  std::vector<std::vector<Matrix>> cap;
  enc.encode(enc.embed_full(patches), &cap);
  ASSERT_EQ(static_cast<int>(cap.size()), profile.depth);
  for (const auto& layer : cap) {
    ASSERT_EQ(static_cast<int>(layer.size()), profile.heads);
    EXPECT_EQ(layer[0].rows(), 65);
  }
}

TEST_F(EncoderTest, HookRunsAfterEachBlock) {
  int calls = 0;
  BlockHook hook = [&](int, const ag::Tensor& x) {
    ++calls;
    return x;
  };
  const auto plain = enc.encode(enc.embed_full(patches));
  const auto hooked = enc.encode(enc.embed_full(patches), nullptr, &hook);
  EXPECT_EQ(calls, profile.depth);
  EXPECT_EQ(plain.tokens.value(), hooked.tokens.value());
}

TEST_F(EncoderTest, AssembleFullPlacesMaskTokens) {
  std::vector<std::uint8_t> mask(64, 0);
  for (int i = 0; i < 64; i += 3) mask[static_cast<std::size_t>(i)] = 1;
  const TokenSet vis = enc.encode(enc.embed_visible(patches, mask));
  ag::Tensor mt = ag::leaf(Matrix::Constant(1, profile.embed_dim, 0.25), true);
  const TokenSet full = assemble_full(vis, mask, mt, enc.pos_table());
  ASSERT_EQ(full.n_tokens(), 65);
  EXPECT_EQ(full.tokens.value().row(0), vis.tokens.value().row(0));  // CLS untouched
  int j = 0;
  for (int p = 0; p < 64; ++p) {
    const Matrix row = full.tokens.value().row(p + 1);
    if (mask[static_cast<std::size_t>(p)]) {
      EXPECT_TRUE(row.isApprox(Matrix::Constant(1, profile.embed_dim, 0.25) + enc.pos_table().row(p)));
    } else {
      EXPECT_TRUE(row.isApprox(vis.tokens.value().row(1 + j) + enc.pos_table().row(p)));
      ++j;
    }
  }
  std::vector<std::uint8_t> bad = mask;
  bad[1] = 1;  // a visible token now sits on a masked slot
  EXPECT_THROW(assemble_full(vis, bad, mt, enc.pos_table()), ShapeError);
}

TEST(Backbone, ParameterNamesAreStableAndHashed) {
  ParameterSet a, b;
  Rng ra(1), rb(1);
  VisionEncoder ea(a, "encoder", ViTProfile::micro(), ra);
  VisionEncoder eb(b, "encoder", ViTProfile::micro(), rb);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.find("encoder.blocks.0.attn.qkv.weight"), nullptr);
  EXPECT_NE(a.find("encoder.cls_token"), nullptr);
  a.all()[0].tensor.mutable_value()(0, 0) += 1.0;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_THROW(a.add("encoder.norm.weight", Matrix::Ones(1, 1), false), StateError);
}
