#include "fsvfm/optim.hpp"

#include <cmath>
#include <numbers>

#include "fsvfm/errors.hpp"

namespace fsvfm {

void AdamW::step(ParameterSet& params, double lr) {
  for (auto& p : params.all()) {
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    const Matrix g = p.tensor.grad();
    Matrix& w = p.tensor.mutable_value();
    Slot& s = slots_[p.name];
    if (s.t == 0) {
      s.m = Matrix::Zero(w.rows(), w.cols());
      s.v = Matrix::Zero(w.rows(), w.cols());
    }
    ++s.t;
    if (p.decay && config_.weight_decay != 0.0) w *= (1.0 - lr * config_.weight_decay);
    s.m = config_.beta1 * s.m + (1.0 - config_.beta1) * g;
    s.v = config_.beta2 * s.v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.t));
    w.array() -= lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + config_.eps);
  }
}

void AdamW::export_state(CheckpointFile& ckpt, const std::string& prefix) const {
  for (const auto& [name, s] : slots_) {
    ckpt.put(prefix + "m." + name, s.m);
    ckpt.put(prefix + "v." + name, s.v);
    Matrix t(1, 1);
    t(0, 0) = static_cast<double>(s.t);
    ckpt.put(prefix + "t." + name, t);
  }
}

void AdamW::import_state(const CheckpointFile& ckpt, const std::string& prefix) {
  slots_.clear();
  const std::string mp = prefix + "m.";
  for (const auto& rec : ckpt.tensors) {
    if (rec.name.rfind(mp, 0) != 0) continue;
    const std::string name = rec.name.substr(mp.size());
    Slot s;
    s.m = rec.value;
    s.v = ckpt.at(prefix + "v." + name);
    s.t = static_cast<std::int64_t>(ckpt.at(prefix + "t." + name)(0, 0));
    slots_[name] = std::move(s);
  }
}

double cosine_lr(double peak, double min_lr, std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps) {
  if (step < warmup_steps) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return peak;
  const double frac =
      std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps));
  return min_lr + (peak - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace fsvfm
