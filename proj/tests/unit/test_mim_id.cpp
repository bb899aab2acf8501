#include <gtest/gtest.h>

#include <cmath>

#include "fsvfm/errors.hpp"
#include "fsvfm/id_branch.hpp"
#include "fsvfm/mim.hpp"
#include "test_support.hpp"

using namespace fsvfm;
using fsvfm::testing::grad_check;
using fsvfm::testing::random_matrix;

namespace {
MaskPair pair_of(std::vector<std::uint8_t> m, std::vector<std::uint8_t> fr = {}) {
  MaskPair p;
  if (fr.empty()) fr.assign(m.size(), 0);
  p.mask = std::move(m);
  p.region_mask = std::move(fr);
  return p;
}
}  // namespace

TEST(Mim, NormPixTargetsUseUnbiasedVariance) {
  Matrix x(1, 4);
  x << 1, 2, 3, 4;
  const Matrix t = normalized_pixel_targets(x, 0.0);
  const double sd = std::sqrt(5.0 / 3.0);
  EXPECT_NEAR(t(0, 0), -1.5 / sd, 1e-12);
  EXPECT_NEAR(t(0, 3), 1.5 / sd, 1e-12);
  EXPECT_NEAR(t.row(0).sum(), 0.0, 1e-12);
}

TEST(Mim, PerfectReconstructionIsZero) {
  Rng rng(1);
  const Matrix t = random_matrix(rng, 6, 5);
  EXPECT_EQ(loss_rec_m(ag::constant(t), t, {1, 0, 1, 0, 0, 1}).item(), 0.0);
}

TEST(Mim, VisiblePositionsDoNotAffectTheLoss) {
  Rng rng(2);
  const Matrix t = random_matrix(rng, 6, 5);
  Matrix pred = random_matrix(rng, 6, 5);
  const std::vector<std::uint8_t> m = {1, 0, 1, 0, 0, 1};
  const double before = loss_rec_m(ag::constant(pred), t, m).item();
  pred.row(1).array() += 100.0;
  EXPECT_EQ(loss_rec_m(ag::constant(pred), t, m).item(), before);
  // and they get exactly zero gradient
  ag::Tensor p = ag::leaf(pred, true);
  ag::backward(loss_rec_m(p, t, m));
  EXPECT_EQ(p.grad().row(1).squaredNorm(), 0.0);
  EXPECT_EQ(p.grad().row(3).squaredNorm(), 0.0);
  EXPECT_GT(p.grad().row(0).squaredNorm(), 0.0);
}

TEST(Mim, HandComputedMeanOverTwoMaskedPatches) {
  Matrix pred = Matrix::Zero(3, 2), t = Matrix::Zero(3, 2);
  pred(0, 0) = 1.0;  // patch 0: mean((1,0)^2) = 0.5
  pred(2, 0) = std::sqrt(3.0);  // patch 2: mean((3,0)) = 1.5
  EXPECT_NEAR(loss_rec_m(ag::constant(pred), t, {1, 0, 1}).item(), 1.0, 1e-15);
}

TEST(Mim, EmptyMaskIsRejected) {
  EXPECT_THROW(loss_rec_m(ag::constant(Matrix::Zero(2, 2)), Matrix::Zero(2, 2), {0, 0}), PreconditionError);
  EXPECT_EQ(loss_rec_fr(ag::constant(Matrix::Ones(2, 2)), Matrix::Zero(2, 2), {0, 0}).item(), 0.0);
}

TEST(Mim, DualLossCombinesWithLambda) {
  Rng rng(3);
  const Matrix t = random_matrix(rng, 4, 3);
  const Matrix p = random_matrix(rng, 4, 3);
  const MaskPair mp = pair_of({1, 1, 1, 0}, {1, 0, 0, 0});
  const RecLoss r = loss_rec(ag::constant(p), t, mp, 0.5);
  EXPECT_NEAR(r.total.item(), r.rec_m.item() + 0.5 * r.rec_fr.item(), 1e-15);
  EXPECT_NEAR(r.rec_fr.item(), (p.row(0) - t.row(0)).squaredNorm() / 3.0, 1e-14);
}

TEST(MimGradCheck, RecLoss) {
  Rng rng(4);
  const Matrix t = random_matrix(rng, 8, 6);
  ag::Tensor p = ag::leaf(random_matrix(rng, 8, 6), true);
  const MaskPair mp = pair_of({1, 1, 0, 1, 0, 1, 1, 0}, {0, 1, 0, 1, 0, 0, 0, 0});
  const auto r = grad_check([&] { return loss_rec(p, t, mp, 0.007).total; }, {{"pred", p}}, rng, 48);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

// ---------------------------------------------------------------------------

TEST(IdLoss, CosineExamples) {
  Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 1, 1;
  EXPECT_NEAR(loss_sim(ag::constant(a), b).item(), -1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(loss_sim(ag::constant(b), b).item(), -1.0, 1e-15);
  Matrix c(1, 2);
  c << 0, 3;
  EXPECT_NEAR(loss_sim(ag::constant(a), c).item(), 0.0, 1e-15);
}

TEST(IdLoss, ZeroVectorTripsTheGuard) {
  reset_sim_guard_count();
  const double v = loss_sim(ag::constant(Matrix::Zero(1, 3)), Matrix::Ones(1, 3)).item();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(sim_guard_count(), 1u);
}

TEST(IdLossProperty, BoundsAndByolRelation) {
  Rng rng(5);
  for (int t = 0; t < 500; ++t) {
    const Matrix o = random_matrix(rng, 1, 16), g = random_matrix(rng, 1, 16);
    const double s = loss_sim(ag::constant(o), g).item();
    ASSERT_GE(s, -1.0 - 1e-12);
    ASSERT_LE(s, 1.0 + 1e-12);
    ASSERT_NEAR(loss_byol_mse(ag::constant(o / o.norm()), g / g.norm()).item(), 2.0 + 2.0 * s, 1e-12);
  }
}

TEST(IdLossGradCheck, SimAndInfoNce) {
  Rng rng(6);
  ag::Tensor o = ag::leaf(random_matrix(rng, 1, 10), true);
  const Matrix g = random_matrix(rng, 1, 10);
  auto r = grad_check([&] { return loss_sim(o, g); }, {{"online", o}}, rng, 10);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
  std::vector<ag::Tensor> os;
  std::vector<Matrix> gs;
  std::vector<std::pair<std::string, ag::Tensor>> named;
  for (int i = 0; i < 4; ++i) {
    os.push_back(ag::leaf(random_matrix(rng, 1, 6), true));
    gs.push_back(random_matrix(rng, 1, 6));
    named.emplace_back("o" + std::to_string(i), os.back());
  }
  r = grad_check([&] { return loss_infonce(os, gs, 0.1); }, named, rng, 6);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
  r = grad_check([&] { return loss_id_variant(IdLossKind::byol_mse, os, gs); }, named, rng, 6);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(IdLoss, VariantNamesRoundTrip) {
  for (auto k : {IdLossKind::ncs_asym, IdLossKind::infonce, IdLossKind::byol_mse}) EXPECT_EQ(parse_id_loss(id_loss_name(k)), k);
  for (auto v : {TargetView::full, TargetView::visible_other_mask, TargetView::masked_same_mask})
    EXPECT_EQ(parse_target_view(target_view_name(v)), v);
  EXPECT_THROW(parse_id_loss("triplet"), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Ema, FixedPointsAndArithmetic) {
  ParameterSet on, tg;
  on.add("w", Matrix::Ones(2, 2), true);
  tg.add("w", Matrix::Zero(2, 2), true, false);
  ema_update(tg, on, 1.0);
  EXPECT_EQ(tg.find("w")->tensor.value(), Matrix::Zero(2, 2));
  ema_update(tg, on, 0.99);
  EXPECT_NEAR(tg.find("w")->tensor.value()(1, 1), 0.01, 1e-17);
  ema_update(tg, on, 0.0);
  EXPECT_EQ(tg.find("w")->tensor.value(), Matrix::Ones(2, 2));
}

TEST(Ema, ShapeOrNameMismatchIsAStateError) {
  ParameterSet on, tg;
  on.add("w", Matrix::Ones(2, 2), true);
  tg.add("w", Matrix::Zero(2, 3), true, false);
  EXPECT_THROW(ema_update(tg, on, 0.5), StateError);
  ParameterSet tg2;
  tg2.add("v", Matrix::Zero(2, 2), true, false);
  EXPECT_THROW(ema_update(tg2, on, 0.5), StateError);
}

TEST(Ema, MomentumRampsFromBaseToOne) {
  EXPECT_DOUBLE_EQ(ema_momentum(0.996, 0, 100), 0.996);
  EXPECT_NEAR(ema_momentum(0.996, 100, 100), 1.0, 1e-15);
  EXPECT_NEAR(ema_momentum(0.996, 50, 100), 0.998, 1e-12);
  double prev = 0.0;
  for (int s = 0; s <= 100; ++s) {
    const double m = ema_momentum(0.996, s, 100);
    EXPECT_GE(m, prev);
    prev = m;
  }
}

class BranchTest : public ::testing::Test {
 protected:
  BranchTest() {
    cfg.proj_hidden = 32;
    cfg.proj_out = 16;
    cfg.pred_hidden = 32;
    Rng init(1), scratch(2);
    online = std::make_unique<OnlineBranch>(ops, profile, cfg, init);
    target = std::make_unique<TargetBranch>(tps, profile, cfg, scratch);
    copy_into_target(tps, ops);
    Rng r(3);
    patches = random_matrix(r, profile.n_patches(), profile.patch_dim());
  }
  ViTProfile profile = ViTProfile::micro();
  IdConfig cfg;
  ParameterSet ops, tps;
  std::unique_ptr<OnlineBranch> online;
  std::unique_ptr<TargetBranch> target;
  Matrix patches;
};

TEST_F(BranchTest, TargetNamesShadowOnlineNames) {
  for (const auto& p : tps.all()) {
    const Parameter* q = ops.find(p.name);
    ASSERT_NE(q, nullptr) << p.name;
    EXPECT_EQ(q->tensor.value(), p.tensor.value());
    EXPECT_FALSE(p.tensor.requires_grad());
  }
  EXPECT_EQ(tps.trainable_scalar_count(), 0u);
}

TEST_F(BranchTest, TargetForwardRecordsNoGraph) {
  const Matrix v = forward_target(patches, *target);
  EXPECT_EQ(v.rows(), 1);
  EXPECT_EQ(v.cols(), cfg.proj_out);
  for (auto view : {TargetView::full, TargetView::visible_other_mask, TargetView::masked_same_mask}) {
    std::vector<std::uint8_t> m(64, 0), o(64, 1);
    for (int i = 0; i < 48; ++i) m[static_cast<std::size_t>(i)] = 1;
    for (int i = 40; i < 64; ++i) o[static_cast<std::size_t>(i)] = 0;
    EXPECT_EQ(forward_target_variant(view, patches, *target, m, o).cols(), cfg.proj_out);
  }
  // full view variant equals forward_target
  EXPECT_EQ(forward_target_variant(TargetView::full, patches, *target, {}, {}), v);
}

TEST_F(BranchTest, OnlineRepIsDifferentiable) {
  std::vector<std::uint8_t> m(64, 0);
  for (int i = 0; i < 64; i += 2) m[static_cast<std::size_t>(i)] = 1;
  const TokenSet zf = assemble_full(online->encoder.encode(online->encoder.embed_visible(patches, m)), m,
                                    online->mask_token, online->encoder.pos_table());
  ag::Tensor v = online->forward_online_rep(zf);
  EXPECT_EQ(v.cols(), cfg.proj_out);
  ops.zero_grad();
  ag::backward(loss_sim(v, forward_target(patches, *target)));
  EXPECT_TRUE(ops.find("predictor.fc2.weight")->tensor.has_grad());
  EXPECT_TRUE(ops.find("mask_token")->tensor.has_grad());
  EXPECT_TRUE(ops.find("encoder.patch_embed.weight")->tensor.has_grad());
  for (const auto& p : tps.all()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
}
