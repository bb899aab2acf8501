#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fsvfm/backbone.hpp"
#include "fsvfm/synth_data.hpp"

namespace fsvfm {

enum class AdapterKind { vanilla_all_layers, variant1_last, variant2_scl, variant3_proj_fa, variant4_no_proj, fs_adapter };
enum class Fusion { concat, residual };

const char* adapter_kind_name(AdapterKind k);
AdapterKind parse_adapter_kind(const std::string& name);
const char* fusion_name(Fusion f);
Fusion parse_fusion(const std::string& name);

// Which token features feed the contrastive projector.
enum class ContrastSource { none, bottleneck, adapter_output };

struct AdapterConfig {
  AdapterKind kind = AdapterKind::fs_adapter;
  int bottleneck = 0;  // 0 = d / 4
  Fusion fusion = Fusion::concat;
  double tau_rac = 0.07;
  double lambda_rac = 0.1;
  double scale = 0.1;  // fixed residual scale (vanilla blocks and residual fusion)

  int bottleneck_for(int d) const { return bottleneck > 0 ? bottleneck : d / 4; }
  void validate(int d) const;
  bool last_only() const { return kind != AdapterKind::vanilla_all_layers; }
  ContrastSource contrast_source() const;
  bool has_projector() const;
  bool supervised_contrastive() const { return kind == AdapterKind::variant2_scl; }
  // Width of the contrastive vectors f_p.
  int contrast_dim(int d) const;
};

// Input width of the classification head.
int head_input_dim(const AdapterConfig& config, int d);

struct AdapterOutput {
  ag::Tensor f_a;  // T x d
  ag::Tensor f_b;  // T x b
};

// f_b = ReLU(f_e w_down), f_a = f_b w_up, tokenwise.
AdapterOutput adapter_forward(const ag::Tensor& f_e, const ag::Tensor& w_down, const ag::Tensor& w_up);
std::vector<AdapterOutput> adapter_forward(const std::vector<ag::Tensor>& f_e, const ag::Tensor& w_down,
                                           const ag::Tensor& w_up);

// Tokenwise w_lp (identity when undefined), mean over rows from
// patch_row_begin, l2-normalized -> 1 x k.
ag::Tensor project_bottleneck(const ag::Tensor& f_b, const ag::Tensor& w_lp, Index patch_row_begin);

// concat: [mean f_e, mean f_a] (1 x 2d); residual: mean(f_e + scale f_a) (1 x d).
ag::Tensor fuse(const ag::Tensor& f_e, const ag::Tensor& f_a, Fusion fusion, Index patch_row_begin,
                double scale = 1.0);

// Real-anchor contrastive loss over unit rows of f_p (B x k). Anchors are the
// reals with at least one other real; every other sample is in the
// denominator. 0 when no anchor exists.
ag::Tensor loss_rac(const ag::Tensor& f_p, const std::vector<Label>& labels, double tau);
// Supervised-contrastive form: fake anchors with fake positives count too.
ag::Tensor loss_scl_variant(const ag::Tensor& f_p, const std::vector<Label>& labels, double tau);

// Trainable adapter parameters in their own set.
class AdapterModule {
 public:
  AdapterModule(ParameterSet& ps, const AdapterConfig& config, int d, int layers, Rng& init);

  const AdapterConfig& config() const { return config_; }
  // Post-block residual hook for vanilla adapters; empty function otherwise.
  BlockHook hook() const;

  struct Features {
    ag::Tensor head_input;  // 1 x head_input_dim
    ag::Tensor f_p;         // 1 x contrast_dim, undefined without a contrastive term
  };
  // From final encoder tokens (already passed through every hook).
  Features features(const ag::Tensor& tokens, Index patch_row_begin) const;

  std::vector<ag::Tensor> w_down;
  std::vector<ag::Tensor> w_up;
  ag::Tensor w_lp;

 private:
  AdapterConfig config_;
  int d_;
};

// Closed-form trainable count; the head is one linear layer with bias.
std::size_t count_trainable(const AdapterConfig& config, int d, int layers, bool with_head, int classes = 2);

}  // namespace fsvfm
