#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fsvfm/backbone.hpp"
#include "fsvfm/checkpoint_io.hpp"
#include "fsvfm/id_branch.hpp"
#include "fsvfm/kv_config.hpp"
#include "fsvfm/loss_report.hpp"
#include "fsvfm/masking.hpp"
#include "fsvfm/optim.hpp"
#include "fsvfm/region_atlas.hpp"

namespace fsvfm {

struct PretrainConfig {
  std::string profile = "micro";
  MaskStrategy mask_strategy = MaskStrategy::crfr_p;
  double mask_ratio = 0.75;
  double lambda_fr = 0.007;
  double lambda_cl = 0.1;
  bool id_enabled = true;
  TargetView target_view = TargetView::full;
  IdLossKind id_loss = IdLossKind::ncs_asym;
  double infonce_temperature = 0.1;
  int proj_hidden = 2048;
  int proj_out = 256;
  int pred_hidden = 2048;
  int epochs = 50;
  int batch_size = 16;
  double base_lr = 1.5e-4;  // peak lr = base_lr * batch_size / 256
  double min_lr = 0.0;
  double warmup_epochs = 5.0;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double ema_tau_base = 0.996;
  std::uint64_t seed = 0;
  // Run-control knobs; excluded from hash() so a resumed run may change them.
  int checkpoint_every = 0;    // steps, 0 = final checkpoint only
  std::int64_t max_steps = 0;  // stop early without altering the schedule

  KeyValues to_kv() const;
  // Unknown keys raise ConfigError.
  static PretrainConfig from_kv(const KeyValues& kv);
  std::uint64_t hash() const;
  void validate() const;

  ViTProfile vit() const;
  IdConfig id() const;
  AdamWConfig adamw() const;
  double peak_lr() const { return base_lr * batch_size / 256.0; }
};

KeyValues profile_to_kv(const ViTProfile& p);
ViTProfile profile_from_kv(const KeyValues& kv);

// Online branch plus pixel decoder in one parameter set, EMA target branch in
// another. Target names equal the online names of the shadowed modules.
struct JointModel {
  JointModel(const ViTProfile& profile, const IdConfig& id, std::uint64_t seed);
  JointModel(const JointModel&) = delete;
  JointModel& operator=(const JointModel&) = delete;

  ViTProfile profile;
  IdConfig id;
  ImageNormalization norm;
  ParameterSet online_params;
  ParameterSet target_params;
  std::unique_ptr<OnlineBranch> online;
  std::unique_ptr<PixelDecoder> pixel_decoder;
  std::unique_ptr<TargetBranch> target;
};

struct PretrainSample {
  std::string sample_id;
  Matrix patches;  // normalized image, patchified
  PatchRegionIndex regions;
};

struct PretrainData {
  std::vector<PretrainSample> samples;
  ImageNormalization norm;
};

// Only per-channel normalization and patchification; no augmentation.
Matrix image_to_patches(const Image& image, const ViTProfile& profile, const ImageNormalization& norm);
PretrainData prepare_pretrain_data(const std::vector<FaceSample>& samples, const ViTProfile& profile,
                                   const ImageNormalization& norm = {});
// FNV-1a over the raw bytes of the given patch matrices, in order.
std::uint64_t patch_hash(const std::vector<const Matrix*>& patches);

struct PretrainState {
  PretrainConfig config;
  std::unique_ptr<JointModel> model;
  AdamW optim;
  Rng rng;  // mask stream, consumed step by step
  std::int64_t step = 0;
  std::int64_t steps_per_epoch = 1;
  std::int64_t total_steps = 1;
  std::filesystem::path diagnostic_dir;  // non-finite dumps go here when set
};

PretrainState init_pretrain_state(const PretrainConfig& config, std::size_t dataset_size);

// Dataset permutation of one epoch, from (seed, "data", epoch).
std::vector<int> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n);
// Indices of the batch consumed by the step numbered state.step.
std::vector<int> batch_for_step(const PretrainState& state, std::size_t n);

struct BatchMasks {
  std::vector<MaskPair> masks;
  std::vector<std::vector<std::uint8_t>> other;  // second mask for visible_other_mask
};
BatchMasks sample_batch_masks(PretrainState& state, const PretrainData& data, const std::vector<int>& batch);

// Forward and backward of the joint objective; leaves gradients on the online
// parameters, touches nothing else.
LossReport compute_gradients(PretrainState& state, const PretrainData& data, const std::vector<int>& batch,
                             const BatchMasks& masks, std::uint64_t* input_hash = nullptr);

// One optimizer step: masks, joint loss, backward, AdamW on the online
// branch, EMA of the target branch.
LossReport pretrain_step(PretrainState& state, const PretrainData& data, std::uint64_t* input_hash = nullptr);

CheckpointFile pretrain_checkpoint(const PretrainState& state);
void save_checkpoint(const std::filesystem::path& path, const PretrainState& state);
PretrainState load_checkpoint(const std::filesystem::path& path);
PretrainState restore_pretrain_state(const CheckpointFile& ckpt);
// Builds the model described by a checkpoint and loads its parameters.
std::unique_ptr<JointModel> load_joint_model(const CheckpointFile& ckpt);

std::string format_loss_record(const LossReport& r);
inline constexpr const char* kLossLogHeader = "step\trec_m\trec_fr\tsim\ttotal";

struct PretrainOptions {
  std::filesystem::path out_dir;      // checkpoints and loss_log.tsv; empty = in-memory only
  std::filesystem::path resume_from;  // checkpoint to continue from
  std::function<void(const LossReport&)> on_step;
};

struct PretrainResult {
  std::vector<LossReport> reports;  // steps run by this call
  std::filesystem::path last_checkpoint;
  std::int64_t final_step = 0;
  std::uint64_t params_hash = 0;
};

PretrainResult pretrain(const PretrainData& data, const PretrainConfig& config, const PretrainOptions& options = {});
// Same loop over an existing state (resume_from is ignored).
PretrainResult run_pretrain(PretrainState& state, const PretrainData& data, const PretrainOptions& options = {});

}  // namespace fsvfm
