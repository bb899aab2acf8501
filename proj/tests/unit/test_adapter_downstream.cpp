#include <gtest/gtest.h>

#include <cmath>

#include "fsvfm/adapter.hpp"
#include "fsvfm/downstream.hpp"
#include "fsvfm/errors.hpp"
#include "fsvfm/pretrainer.hpp"
#include "test_support.hpp"

using namespace fsvfm;
using fsvfm::testing::grad_check;
using fsvfm::testing::random_matrix;
using fsvfm::testing::TempDir;

namespace {
Matrix unit_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index r = 0;
  for (const auto& row : rows) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}
const Label R = Label::real;
const Label F = Label::fake;
}  // namespace

TEST(Adapter, ZeroDownProjectionGivesZeroOutputs) {
  Rng rng(1);
  const auto out = adapter_forward(ag::constant(random_matrix(rng, 5, 8)), ag::constant(Matrix::Zero(8, 2)),
                                   ag::constant(random_matrix(rng, 2, 8)));
  EXPECT_EQ(out.f_b.value(), Matrix::Zero(5, 2));
  EXPECT_EQ(out.f_a.value(), Matrix::Zero(5, 8));
}

TEST(Adapter, HandSetFourByTwo) {
  Matrix fe(1, 4), wd(4, 2), wu(2, 4);
  fe << 1, 2, -1, 0.5;
  wd << 1, 0, 0, 1, 1, -1, 2, 2;  // pre-activation: (1 - 1 + 1, 2 + 1 + 1) = (1, 4)
  wu << 1, 0, 0, 1, 0, 1, 1, 0;
  const auto out = adapter_forward(ag::constant(fe), ag::constant(wd), ag::constant(wu));
  EXPECT_EQ(out.f_b.value(), (Matrix(1, 2) << 1, 4).finished());
  EXPECT_EQ(out.f_a.value(), (Matrix(1, 4) << 1, 4, 4, 1).finished());
  // ReLU clamps a negative pre-activation
  fe << -1, 0, 0, 0;
  EXPECT_EQ(adapter_forward(ag::constant(fe), ag::constant(wd), ag::constant(wu)).f_b.value(), Matrix::Zero(1, 2));
}

TEST(AdapterProperty, ShapeContract) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const int n = rng.uniform_int(1, 20), d = rng.uniform_int(2, 24), b = rng.uniform_int(1, d);
    const auto out = adapter_forward(ag::constant(random_matrix(rng, n, d)), ag::constant(random_matrix(rng, d, b)),
                                     ag::constant(random_matrix(rng, b, d)));
    ASSERT_EQ(out.f_a.rows(), n);
    ASSERT_EQ(out.f_a.cols(), d);
    ASSERT_EQ(out.f_b.rows(), n);
    ASSERT_EQ(out.f_b.cols(), b);
  }
}

TEST(Adapter, FusionWidths) {
  Rng rng(3);
  const ag::Tensor fe = ag::constant(random_matrix(rng, 5, 6)), fa = ag::constant(random_matrix(rng, 5, 6));
  const ag::Tensor c = fuse(fe, fa, Fusion::concat, 1);
  ASSERT_EQ(c.cols(), 12);
  EXPECT_TRUE(c.value().leftCols(6).isApprox(fe.value().bottomRows(4).colwise().mean()));
  const ag::Tensor r = fuse(fe, fa, Fusion::residual, 1, 0.1);
  ASSERT_EQ(r.cols(), 6);
  EXPECT_TRUE(r.value().isApprox((fe.value() + 0.1 * fa.value()).bottomRows(4).colwise().mean()));
}

TEST(Rac, ClosedFormExamples) {
  // all fakes: no anchors
  EXPECT_EQ(loss_rac(ag::constant(unit_rows({{1, 0}, {0, 1}})), {F, F}, 0.5).item(), 0.0);
  // two identical reals only: the positive is the whole denominator
  EXPECT_NEAR(loss_rac(ag::constant(unit_rows({{1, 0}, {1, 0}})), {R, R}, 0.3).item(), 0.0, 1e-15);
  // reals at e1, e1 and a fake at e2, tau = 1
  const double v = loss_rac(ag::constant(unit_rows({{1, 0}, {1, 0}, {0, 1}})), {R, R, F}, 1.0).item();
  EXPECT_NEAR(v, -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
  EXPECT_NEAR(v, 0.3133, 1e-4);
  EXPECT_THROW(loss_rac(ag::constant(unit_rows({{1, 0}})), {R}, 0.0), ConfigError);
}

TEST(Rac, FakesAreNeverAnchors) {
  // the SCL variant adds fake anchors; RAC ignores fake-fake similarity
  const Matrix f = unit_rows({{1, 0}, {0.6, 0.8}, {0, 1}, {-1, 0}});
  const double rac = loss_rac(ag::constant(f), {R, R, F, F}, 0.5).item();
  const double scl = loss_scl_variant(ag::constant(f), {R, R, F, F}, 0.5).item();
  EXPECT_NE(rac, scl);
  Matrix g = f;
  g.row(3) << 0, -1;  // moving only a fake changes RAC through the denominators
  EXPECT_NE(loss_rac(ag::constant(g), {R, R, F, F}, 0.5).item(), rac);
}

TEST(RacGradCheck, ThroughProjectionAndNormalization) {
  Rng rng(4);
  std::vector<ag::Tensor> fb;
  std::vector<std::pair<std::string, ag::Tensor>> named;
  for (int i = 0; i < 5; ++i) {
    fb.push_back(ag::leaf(random_matrix(rng, 3, 4), true));
    named.emplace_back("fb" + std::to_string(i), fb.back());
  }
  ag::Tensor wlp = ag::leaf(random_matrix(rng, 4, 4), true);
  named.emplace_back("w_lp", wlp);
  const std::vector<Label> labels = {R, F, R, R, F};
  auto loss = [&] {
    std::vector<ag::Tensor> rows;
    for (const auto& t : fb) rows.push_back(project_bottleneck(t, wlp, 0));
    return loss_rac(ag::concat_rows(rows), labels, 0.07);
  };
  const auto r = grad_check(loss, named, rng, 12);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(Adapter, ParameterAccounting) {
  AdapterConfig fs;
  fs.bottleneck = 256;
  EXPECT_EQ(count_trainable(fs, 1024, 24, false), 589824u);
  EXPECT_EQ(count_trainable(fs, 1024, 24, true), 589824u + 2u * 2048u + 2u);
  AdapterConfig va = fs;
  va.kind = AdapterKind::vanilla_all_layers;
  EXPECT_EQ(count_trainable(va, 1024, 24, false), 12582912u);
  AdapterConfig v1 = fs;
  v1.kind = AdapterKind::variant1_last;
  EXPECT_EQ(count_trainable(v1, 1024, 24, false), 2u * 1024u * 256u);
  AdapterConfig v3 = fs;
  v3.kind = AdapterKind::variant3_proj_fa;
  EXPECT_EQ(count_trainable(v3, 1024, 24, false), 2u * 1024u * 256u + 1024u * 1024u);
}

TEST(Adapter, ModuleCountMatchesClosedForm) {
  for (auto kind : {AdapterKind::vanilla_all_layers, AdapterKind::variant1_last, AdapterKind::variant2_scl,
                    AdapterKind::variant3_proj_fa, AdapterKind::variant4_no_proj, AdapterKind::fs_adapter}) {
    AdapterConfig c;
    c.kind = kind;
    c.fusion = kind == AdapterKind::vanilla_all_layers ? Fusion::residual : Fusion::concat;
    ParameterSet ps;
    Rng init(1);
    AdapterModule m(ps, c, 64, 4, init);
    EXPECT_EQ(ps.trainable_scalar_count(), count_trainable(c, 64, 4, false)) << adapter_kind_name(kind);
    EXPECT_EQ(m.hook() != nullptr, !c.last_only());
  }
}

TEST(Adapter, ConfigValidation) {
  AdapterConfig c;
  c.bottleneck = 64;
  EXPECT_THROW(c.validate(64), ConfigError);
  c.bottleneck = 16;
  c.tau_rac = -1;
  EXPECT_THROW(c.validate(64), ConfigError);
  c.tau_rac = 0.07;
  c.fusion = Fusion::residual;
  EXPECT_THROW(c.validate(64), ConfigError);
  EXPECT_THROW(parse_adapter_kind("lora"), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Metrics, AucExamples) {
  EXPECT_DOUBLE_EQ(frame_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(frame_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}), 0.5);
  // one inverted pair out of 9
  const std::vector<double> s = {0.1, 0.2, 0.35, 0.3, 0.7, 0.9};
  const std::vector<int> l = {0, 0, 0, 1, 1, 1};
  EXPECT_DOUBLE_EQ(frame_auc(s, l), 8.0 / 9.0);
  EXPECT_DOUBLE_EQ(frame_auc(s, l), fsvfm::testing::auc_pair_oracle(s, l));
  EXPECT_THROW(frame_auc({0.1, 0.2}, {0, 0}), PreconditionError);
}

TEST(Metrics, VideoAucAggregatesGroups) {
  const std::vector<double> s = {0.1, 0.9, 0.2, 0.3, 0.8, 0.6};
  const std::vector<int> l = {0, 0, 0, 1, 1, 1};
  const std::vector<std::string> g = {"a", "a", "b", "c", "c", "d"};
  // per-group means: a 0.5, b 0.2, c 0.55, d 0.6 -> reals {0.5, 0.2}, fakes {0.55, 0.6}
  EXPECT_DOUBLE_EQ(video_auc(s, l, g), 1.0);
  EXPECT_THROW(video_auc(s, l, {"a", "a", "a", "a", "b", "b"}), PreconditionError);
}

TEST(Metrics, HterAndEerBoundaries) {
  const std::vector<double> s = {0.1, 0.2, 0.8, 0.9};
  const std::vector<int> l = {0, 0, 1, 1};
  const ErrorRates e = error_rates(s, l, 0.0);
  EXPECT_EQ(e.far, 1.0);
  EXPECT_EQ(e.frr, 0.0);
  EXPECT_EQ(hter(s, l, 0.0), 0.5);
  const EerPoint p = eer_threshold(s, l);
  EXPECT_EQ(p.eer, 0.0);
  EXPECT_EQ(hter(s, l, p.threshold), 0.0);
  EXPECT_EQ(p.threshold, 0.8);  // lowest threshold with zero errors
}

TEST(MetricsProperty, MatchBruteForceOracles) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s;
    std::vector<int> l;
    fsvfm::testing::random_scores(rng, rng.uniform_int(4, 40), s, l);
    ASSERT_DOUBLE_EQ(frame_auc(s, l), fsvfm::testing::auc_pair_oracle(s, l));
    const EerPoint a = eer_threshold(s, l), b = fsvfm::testing::eer_sweep_oracle(s, l);
    ASSERT_EQ(a.threshold, b.threshold);
    ASSERT_EQ(a.eer, b.eer);
    const double thr = s[static_cast<std::size_t>(rng.uniform_index(s.size()))];
    ASSERT_EQ(hter(s, l, thr), fsvfm::testing::rates_oracle(s, l, thr).hter);
  }
}

TEST(MetricsProperty, AucInvariantUnderMonotoneMaps) {
  Rng rng(6);
  std::vector<double> s;
  std::vector<int> l;
  fsvfm::testing::random_scores(rng, 30, s, l);
  const double base = frame_auc(s, l);
  for (int k = 0; k < 20; ++k) {
    const double a = rng.uniform(0.1, 5.0), b = rng.uniform(-3, 3);
    std::vector<double> m(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) m[i] = std::exp(a * s[i]) + b;
    ASSERT_EQ(frame_auc(m, l), base);
  }
}

TEST(Downstream, TuneModeNames) {
  EXPECT_EQ(parse_tune_mode("linear"), TuneMode::linear_probe);
  EXPECT_EQ(parse_tune_mode("adapter"), TuneMode::adapter);
  EXPECT_EQ(parse_tune_mode("full"), TuneMode::full);
  EXPECT_THROW(parse_tune_mode("lora"), ConfigError);
}

TEST(Downstream, EvalReportIsCanonical) {
  EvalResult r;
  r.frame_auc = 0.75;
  r.n_frames = 4;
  const std::string text = format_key_values(r.to_kv());
  EXPECT_NE(text.find("frame_auc = 0.75\n"), std::string::npos);
  EXPECT_EQ(text, format_key_values(r.to_kv()));
}

class DetectorTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = new TempDir("detector");
    PretrainConfig c = fsvfm::testing::small_pretrain_config();
    c.epochs = 1;
    SynthConfig sc;
    sc.n_real = 8;
    PretrainOptions o;
    o.out_dir = dir->path();
    pretrain(prepare_pretrain_data(generate_synthetic(sc), ViTProfile::micro()), c, o);
    SynthConfig tc;
    tc.n_real = 8;
    tc.n_fake = 8;
    tc.seed = 5;
    train = new std::vector<FaceSample>(generate_synthetic(tc));
  }
  static void TearDownTestSuite() {
    delete train;
    delete dir;
  }
  static std::unique_ptr<DetectorModel> build(TuneMode mode, AdapterKind kind = AdapterKind::fs_adapter) {
    FinetuneConfig fc;
    fc.mode = mode;
    fc.adapter.kind = kind;
    if (kind == AdapterKind::vanilla_all_layers) fc.adapter.fusion = Fusion::residual;
    fc.steps = 3;
    fc.batch_size = 8;
    auto m = build_detector(load_backbone(ckpt()), fc);
    m->backbone_path = ckpt();
    return m;
  }
  static std::filesystem::path ckpt() { return dir->path() / "final.ckpt"; }
  static TempDir* dir;
  static std::vector<FaceSample>* train;
};
TempDir* DetectorTest::dir = nullptr;
std::vector<FaceSample>* DetectorTest::train = nullptr;

TEST_F(DetectorTest, AdapterModeLeavesTheBackboneUntouched) {
  auto m = build(TuneMode::adapter);
  const auto before = m->backbone->params.hash();
  const auto head_before = m->tuned.hash();
  finetune(*m, *train);
  EXPECT_EQ(m->backbone->params.hash(), before);
  EXPECT_NE(m->tuned.hash(), head_before);
  for (const auto& p : m->backbone->params.all()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
}

TEST_F(DetectorTest, EveryModeAndVariantTrainsAndScores) {
  for (auto kind : {AdapterKind::vanilla_all_layers, AdapterKind::variant1_last, AdapterKind::variant2_scl,
                    AdapterKind::variant3_proj_fa, AdapterKind::variant4_no_proj, AdapterKind::fs_adapter}) {
    auto m = build(TuneMode::adapter, kind);
    const auto reports = finetune(*m, *train);
    ASSERT_EQ(reports.size(), 3u);
    for (const auto& r : reports) EXPECT_TRUE(std::isfinite(r.total)) << adapter_kind_name(kind);
    const auto s = predict_scores(*m, *train);
    for (double v : s) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  }
  for (auto mode : {TuneMode::full, TuneMode::linear_probe}) {
    auto m = build(mode);
    const auto before = m->backbone->params.hash();
    finetune(*m, *train);
    if (mode == TuneMode::full) EXPECT_NE(m->backbone->params.hash(), before);
    else EXPECT_EQ(m->backbone->params.hash(), before);
  }
}

TEST_F(DetectorTest, DetectorCheckpointRoundTrip) {
  for (auto mode : {TuneMode::adapter, TuneMode::full, TuneMode::linear_probe}) {
    auto m = build(mode);
    finetune(*m, *train);
    const auto path = dir->path() / (std::string("tuned_") + tune_mode_name(mode) + ".ckpt");
    save_detector(path, *m);
    auto back = load_detector(path);
    EXPECT_EQ(predict_scores(*back, *train), predict_scores(*m, *train)) << tune_mode_name(mode);
    const CheckpointFile ck = read_checkpoint_file(path);
    const bool has_backbone = ck.find("backbone.encoder.patch_embed.weight") != nullptr;
    EXPECT_EQ(has_backbone, mode == TuneMode::full);
  }
}

TEST_F(DetectorTest, ChangedBackboneIsDetected) {
  auto m = build(TuneMode::adapter);
  const auto path = dir->path() / "tuned_check.ckpt";
  save_detector(path, *m);
  // a different pre-training run at the referenced path
  PretrainConfig c = fsvfm::testing::small_pretrain_config();
  c.epochs = 1;
  c.seed = 99;
  SynthConfig sc;
  sc.n_real = 4;
  PretrainOptions o;
  TempDir other("other_backbone");
  o.out_dir = other.path();
  pretrain(prepare_pretrain_data(generate_synthetic(sc), ViTProfile::micro()), c, o);
  EXPECT_THROW(load_detector(path, other / "final.ckpt"), StateError);
}
