#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fsvfm/adapter.hpp"
#include "fsvfm/backbone.hpp"
#include "fsvfm/checkpoint_io.hpp"
#include "fsvfm/kv_config.hpp"
#include "fsvfm/loss_report.hpp"
#include "fsvfm/synth_data.hpp"

namespace fsvfm {

enum class TuneMode { full, adapter, linear_probe };
const char* tune_mode_name(TuneMode m);
// Accepts "linear" as an alias of linear_probe.
TuneMode parse_tune_mode(const std::string& name);

struct HeadConfig {
  int input_dim = 0;
  int classes = 2;
  double init_std = 0.01;
};

// One linear layer: truncated-normal weights, zero bias. The input first
// passes a fixed per-feature affine standardization (identity until
// calibrated), so the whole head stays a single affine map.
class LinearHead {
 public:
  LinearHead(ParameterSet& ps, const std::string& prefix, const HeadConfig& config, Rng& init);
  ag::Tensor forward(const ag::Tensor& x) const;
  // Standardize each feature with the given rows' statistics; features
  // constant over the rows pass through unchanged.
  void calibrate(const Matrix& inputs);
  ag::Tensor weight;
  ag::Tensor bias;
  ag::Tensor input_scale;  // 1 x in, not trained
  ag::Tensor input_shift;  // 1 x in, not trained
};

// Frozen or tunable encoder taken from a checkpoint.
struct Backbone {
  ViTProfile profile;
  ImageNormalization norm;
  ParameterSet params;  // names "encoder.*"
  std::unique_ptr<VisionEncoder> encoder;
  std::string config_hash;     // of the pre-training run
  std::uint64_t params_hash = 0;  // at load time
};

// Online encoder of a pre-training checkpoint.
std::unique_ptr<Backbone> load_backbone(const CheckpointFile& pretrain_ckpt);
std::unique_ptr<Backbone> load_backbone(const std::filesystem::path& pretrain_ckpt);

struct FinetuneConfig {
  TuneMode mode = TuneMode::adapter;
  AdapterConfig adapter;
  int steps = 300;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.05;
  double warmup_frac = 0.05;
  std::uint64_t seed = 0;

  KeyValues to_kv() const;
  static FinetuneConfig from_kv(const KeyValues& kv);
  std::uint64_t hash() const;
};

struct DetectorModel {
  FinetuneConfig config;
  std::unique_ptr<Backbone> backbone;
  ParameterSet tuned;  // adapter.* and head.*
  std::unique_ptr<AdapterModule> adapter;
  std::unique_ptr<LinearHead> head;
  std::filesystem::path backbone_path;

  struct Output {
    ag::Tensor logits;  // 1 x classes
    ag::Tensor f_p;     // contrastive vector, may be undefined
  };
  // Encoder tokens (after any per-block adapters) -> head.
  Output forward_tokens(const ag::Tensor& tokens, Index patch_row_begin) const;
  // Pooled (and fused) head input without the head.
  ag::Tensor head_input(const ag::Tensor& tokens, Index patch_row_begin) const;
  Output forward(const Matrix& patches) const;
  // Final encoder tokens; adapter hooks applied when present.
  TokenSet encode(const Matrix& patches, std::vector<std::vector<Matrix>>* capture = nullptr) const;
};

// Fresh adapter/head on top of the backbone; trainability set per mode.
std::unique_ptr<DetectorModel> build_detector(std::unique_ptr<Backbone> backbone, const FinetuneConfig& config);

struct FinetuneOptions {
  std::function<void(const LossReport&)> on_step;
};

// Cross-entropy (+ lambda_rac * contrastive term in adapter mode). Samples
// must carry labels.
std::vector<LossReport> finetune(DetectorModel& model, const std::vector<FaceSample>& train,
                                 const FinetuneOptions& options = {});

// Tuned checkpoint. In full mode the encoder weights are stored; otherwise
// only adapter/head tensors plus a reference to the backbone checkpoint.
CheckpointFile detector_checkpoint(const DetectorModel& model);
void save_detector(const std::filesystem::path& path, const DetectorModel& model);
// backbone_override replaces the stored backbone path when given.
std::unique_ptr<DetectorModel> load_detector(const std::filesystem::path& path,
                                             const std::filesystem::path& backbone_override = {});

// P(fake) per sample, in input order.
std::vector<double> predict_scores(const DetectorModel& model, const std::vector<FaceSample>& samples);
// Unit contrastive vectors (adapter kinds with a contrastive term).
std::vector<Matrix> contrast_features(const DetectorModel& model, const std::vector<FaceSample>& samples);

// Rank-statistic AUC with midranks; fake (1) is the positive class.
double frame_auc(const std::vector<double>& scores, const std::vector<int>& labels);
// Per-group mean score, then frame_auc over groups. A group must not mix labels.
double video_auc(const std::vector<double>& scores, const std::vector<int>& labels,
                 const std::vector<std::string>& groups);

struct ErrorRates {
  double far = 0.0;  // reals flagged fake
  double frr = 0.0;  // fakes passed as real
};
// Predict fake iff score >= threshold.
ErrorRates error_rates(const std::vector<double>& scores, const std::vector<int>& labels, double threshold);
double hter(const std::vector<double>& scores, const std::vector<int>& labels, double threshold);

struct EerPoint {
  double eer = 0.0;
  double threshold = 0.0;
};
// Candidates are the distinct scores plus one value above the maximum;
// minimizes |FAR - FRR|, ties to the lower threshold; eer = (FAR + FRR) / 2.
EerPoint eer_threshold(const std::vector<double>& scores, const std::vector<int>& labels);

struct EvalResult {
  double frame_auc = 0.0;
  double video_auc = 0.0;
  double hter = 0.0;
  double eer = 0.0;
  double threshold = 0.0;
  std::int64_t n_frames = 0;
  std::int64_t n_videos = 0;

  KeyValues to_kv() const;
};

std::vector<int> label_codes(const std::vector<FaceSample>& samples);
std::vector<std::string> group_ids(const std::vector<FaceSample>& samples);

// HTER uses `threshold` when given (e.g. from a development split),
// otherwise the test-set EER threshold.
EvalResult evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels,
                           const std::vector<std::string>& groups, std::optional<double> threshold = std::nullopt);

// sample_id<TAB>group_id<TAB>label<TAB>score per line.
std::string format_scores(const std::vector<FaceSample>& samples, const std::vector<double>& scores);

}  // namespace fsvfm
