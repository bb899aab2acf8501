#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsvfm/backbone.hpp"

namespace fsvfm {

enum class IdLossKind { ncs_asym, infonce, byol_mse };
enum class TargetView { full, visible_other_mask, masked_same_mask };

const char* id_loss_name(IdLossKind k);
IdLossKind parse_id_loss(const std::string& name);
const char* target_view_name(TargetView v);
TargetView parse_target_view(const std::string& name);

struct IdConfig {
  int proj_hidden = 2048;
  int proj_out = 256;
  int pred_hidden = 2048;
  IdLossKind loss = IdLossKind::ncs_asym;
  TargetView view = TargetView::full;
  double infonce_temperature = 0.1;
};

// Cross-attention block used as the latent regressor of the masked-view
// variant: queries attend to a separate key/value token set.
class CrossBlock {
 public:
  CrossBlock(ParameterSet& ps, const std::string& prefix, int dim, int heads, double mlp_ratio, Rng& init);
  ag::Tensor forward(const ag::Tensor& queries, const ag::Tensor& context) const;

 private:
  int heads_;
  LayerNorm ln_q_, ln_kv_, ln2_;
  Linear q_, kv_, proj_, fc1_, fc2_;
  int dim_;
};

// Online side. The encoder and mask token are shared with the pixel decoder
// path; names match the target branch one to one for the shadowed modules.
struct OnlineBranch {
  OnlineBranch(ParameterSet& ps, const ViTProfile& profile, const IdConfig& cfg, Rng& init);

  VisionEncoder encoder;
  ag::Tensor mask_token;
  RepDecoder rep_decoder;
  MlpHead projector;
  MlpHead predictor;
  std::optional<CrossBlock> regressor;

  // v_o^p from the assembled full token set z_o^f.
  ag::Tensor forward_online_rep(const TokenSet& z_full) const;
  // Masked-view variant: regress the representation of the masked positions
  // from z_o^f, then decode, project and predict.
  ag::Tensor forward_online_masked(const TokenSet& z_full, const std::vector<std::uint8_t>& mask) const;
};

struct TargetBranch {
  TargetBranch(ParameterSet& ps, const ViTProfile& profile, const IdConfig& cfg, Rng& init);

  VisionEncoder encoder;
  RepDecoder rep_decoder;
  MlpHead projector;
};

// Adds the positional table to every patch row (CLS untouched).
TokenSet add_positions(const TokenSet& tokens, const Matrix& pos_table);

// v_t for the default full view; all target parameters are constants, so no
// graph is recorded.
Matrix forward_target(const Matrix& patches, const TargetBranch& target);
// view-dependent target. mask is the online mask M; other_mask is the
// independent second mask used by visible_other_mask.
Matrix forward_target_variant(TargetView view, const Matrix& patches, const TargetBranch& target,
                              const std::vector<std::uint8_t>& mask, const std::vector<std::uint8_t>& other_mask);

// -<p/|p|, t/|t|>, norms floored at 1e-12.
ag::Tensor loss_sim(const ag::Tensor& online, const Matrix& target);
// Number of times loss_sim met a vector with norm below the floor.
std::uint64_t sim_guard_count();
void reset_sim_guard_count();

// ||p_hat - t_hat||^2 for one pair.
ag::Tensor loss_byol_mse(const ag::Tensor& online, const Matrix& target);
// In-batch InfoNCE: row i of online matches row i of targets.
ag::Tensor loss_infonce(const std::vector<ag::Tensor>& online, const std::vector<Matrix>& targets, double temperature);

// Batch mean of the chosen ID loss.
ag::Tensor loss_id_variant(IdLossKind kind, const std::vector<ag::Tensor>& online, const std::vector<Matrix>& targets,
                           double temperature = 0.1);

// theta_t <- tau * theta_t + (1 - tau) * theta_o over every target parameter,
// matched to the online parameter of the same name.
void ema_update(ParameterSet& target, const ParameterSet& online, double tau);
// Copies online values into the target (tau = 0).
void copy_into_target(ParameterSet& target, const ParameterSet& online);

// BYOL cosine ramp: 1 - (1 - base) * (cos(pi * step / total) + 1) / 2.
double ema_momentum(double tau_base, std::int64_t step, std::int64_t total_steps);

}  // namespace fsvfm
