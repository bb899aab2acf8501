#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fsvfm/backbone.hpp"
#include "fsvfm/checkpoint_io.hpp"

namespace fsvfm {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Decoupled weight decay Adam. Parameters that are frozen or received no
// gradient this step are skipped entirely, moments included. Weight decay
// applies only to parameters flagged `decay`.
class AdamW {
 public:
  struct Slot {
    Matrix m;
    Matrix v;
    std::int64_t t = 0;
  };

  explicit AdamW(AdamWConfig config = {}) : config_(config) {}
  void step(ParameterSet& params, double lr);

  const AdamWConfig& config() const { return config_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

  // Moments as tensors "<prefix>m.<name>", "<prefix>v.<name>", "<prefix>t.<name>".
  void export_state(CheckpointFile& ckpt, const std::string& prefix) const;
  void import_state(const CheckpointFile& ckpt, const std::string& prefix);

 private:
  AdamWConfig config_;
  std::map<std::string, Slot> slots_;
};

// Linear warmup over warmup_steps (reaching peak at the end of warmup)
// followed by half-cosine decay to min_lr at total_steps.
double cosine_lr(double peak, double min_lr, std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps);

}  // namespace fsvfm
