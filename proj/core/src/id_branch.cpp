#include "fsvfm/id_branch.hpp"

#include <atomic>
#include <cmath>
#include <numbers>

#include "fsvfm/errors.hpp"

namespace fsvfm {

namespace {
constexpr double kNormFloor = 1e-12;
std::atomic<std::uint64_t> g_sim_guard{0};

void guard_norm(double n) {
  if (n < kNormFloor) g_sim_guard.fetch_add(1, std::memory_order_relaxed);
}

Matrix normalized(const Matrix& v) {
  const double n = v.norm();
  guard_norm(n);
  return v / std::max(n, kNormFloor);
}
}  // namespace

const char* id_loss_name(IdLossKind k) {
  switch (k) {
    case IdLossKind::ncs_asym: return "ncs_asym";
    case IdLossKind::infonce: return "infonce";
    case IdLossKind::byol_mse: return "byol_mse";
  }
  return "unknown";
}

IdLossKind parse_id_loss(const std::string& name) {
  for (auto k : {IdLossKind::ncs_asym, IdLossKind::infonce, IdLossKind::byol_mse})
    if (name == id_loss_name(k)) return k;
  throw ConfigError("unknown id loss '" + name + "'");
}

const char* target_view_name(TargetView v) {
  switch (v) {
    case TargetView::full: return "full";
    case TargetView::visible_other_mask: return "visible_other_mask";
    case TargetView::masked_same_mask: return "masked_same_mask";
  }
  return "unknown";
}

TargetView parse_target_view(const std::string& name) {
  for (auto v : {TargetView::full, TargetView::visible_other_mask, TargetView::masked_same_mask})
    if (name == target_view_name(v)) return v;
  throw ConfigError("unknown target view '" + name + "'");
}

CrossBlock::CrossBlock(ParameterSet& ps, const std::string& prefix, int dim, int heads, double mlp_ratio, Rng& init)
    : heads_(heads), dim_(dim) {
  const int hidden = static_cast<int>(std::lround(dim * mlp_ratio));
  ln_q_ = LayerNorm(ps, prefix + ".norm_q", dim);
  ln_kv_ = LayerNorm(ps, prefix + ".norm_kv", dim);
  q_ = Linear(ps, prefix + ".attn.q", dim, dim, init);
  kv_ = Linear(ps, prefix + ".attn.kv", dim, 2 * dim, init);
  proj_ = Linear(ps, prefix + ".attn.proj", dim, dim, init);
  ln2_ = LayerNorm(ps, prefix + ".norm2", dim);
  fc1_ = Linear(ps, prefix + ".mlp.fc1", dim, hidden, init);
  fc2_ = Linear(ps, prefix + ".mlp.fc2", hidden, dim, init);
}

ag::Tensor CrossBlock::forward(const ag::Tensor& queries, const ag::Tensor& context) const {
  ag::Tensor q = q_.forward(ln_q_.forward(queries));
  ag::Tensor kv = kv_.forward(ln_kv_.forward(context));
  ag::Tensor k = ag::slice_cols(kv, 0, dim_);
  ag::Tensor v = ag::slice_cols(kv, dim_, dim_);
  ag::Tensor h = ag::add(queries, proj_.forward(ag::attention(q, k, v, heads_)));
  return ag::add(h, fc2_.forward(ag::gelu(fc1_.forward(ln2_.forward(h)))));
}

OnlineBranch::OnlineBranch(ParameterSet& ps, const ViTProfile& profile, const IdConfig& cfg, Rng& init)
    : encoder(ps, "encoder", profile, init),
      mask_token(ps.add("mask_token", [&] {
        Matrix m(1, profile.embed_dim);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = init.normal() * 0.02;
        return m;
      }(), false)),
      rep_decoder(ps, "rep_decoder", profile, init),
      projector(ps, "projector", profile.embed_dim, cfg.proj_hidden, cfg.proj_out, init),
      predictor(ps, "predictor", cfg.proj_out, cfg.pred_hidden, cfg.proj_out, init) {
  if (cfg.view == TargetView::masked_same_mask)
    regressor.emplace(ps, "regressor", profile.embed_dim, profile.heads, profile.mlp_ratio, init);
}

ag::Tensor OnlineBranch::forward_online_rep(const TokenSet& z_full) const {
  return predictor.forward(projector.forward(rep_decoder.decode(z_full)));
}

ag::Tensor OnlineBranch::forward_online_masked(const TokenSet& z_full, const std::vector<std::uint8_t>& mask) const {
  if (!regressor) throw StateError("online branch was built without a latent regressor");
  std::vector<int> masked;
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    if (mask[static_cast<std::size_t>(i)]) masked.push_back(i);
  Matrix pos(static_cast<Index>(masked.size()), encoder.pos_table().cols());
  std::vector<int> source(masked.size(), -1);
  for (std::size_t j = 0; j < masked.size(); ++j) pos.row(static_cast<Index>(j)) = encoder.pos_table().row(masked[j]);
  ag::Tensor queries = ag::add_constant(ag::assemble_rows(ag::Tensor{}, mask_token, source), pos);
  TokenSet latent;
  latent.tokens = regressor->forward(queries, z_full.tokens);
  latent.positions = masked;
  latent.has_cls = false;
  return predictor.forward(projector.forward(rep_decoder.decode(latent)));
}

TargetBranch::TargetBranch(ParameterSet& ps, const ViTProfile& profile, const IdConfig& cfg, Rng& init)
    : encoder(ps, "encoder", profile, init),
      rep_decoder(ps, "rep_decoder", profile, init),
      projector(ps, "projector", profile.embed_dim, cfg.proj_hidden, cfg.proj_out, init) {
  ps.set_trainable(false);
}

TokenSet add_positions(const TokenSet& tokens, const Matrix& pos_table) {
  const int off = tokens.patch_row_begin();
  Matrix pos = Matrix::Zero(tokens.n_tokens(), pos_table.cols());
  for (std::size_t j = 0; j < tokens.positions.size(); ++j)
    pos.row(static_cast<Index>(j) + off) = pos_table.row(tokens.positions[j]);
  TokenSet out = tokens;
  out.tokens = ag::add_constant(tokens.tokens, pos);
  return out;
}

namespace {
Matrix target_from_positions(const Matrix& patches, const TargetBranch& t, const std::vector<int>& positions) {
  TokenSet z = t.encoder.encode(t.encoder.embed_positions(patches, positions));
  return t.projector.forward(t.rep_decoder.decode(add_positions(z, t.encoder.pos_table()))).value();
}

std::vector<int> positions_where(const std::vector<std::uint8_t>& mask, std::uint8_t value) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    if (mask[static_cast<std::size_t>(i)] == value) out.push_back(i);
  return out;
}
}  // namespace

Matrix forward_target(const Matrix& patches, const TargetBranch& target) {
  std::vector<int> all(static_cast<std::size_t>(target.encoder.profile().n_patches()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return target_from_positions(patches, target, all);
}

Matrix forward_target_variant(TargetView view, const Matrix& patches, const TargetBranch& target,
                              const std::vector<std::uint8_t>& mask, const std::vector<std::uint8_t>& other_mask) {
  switch (view) {
    case TargetView::full: return forward_target(patches, target);
    case TargetView::visible_other_mask: return target_from_positions(patches, target, positions_where(other_mask, 0));
    case TargetView::masked_same_mask: return target_from_positions(patches, target, positions_where(mask, 1));
  }
  throw ConfigError("unknown target view");
}

ag::Tensor loss_sim(const ag::Tensor& online, const Matrix& target) {
  if (online.rows() != 1 || target.rows() != 1 || online.cols() != target.cols())
    throw ShapeError("loss_sim expects two 1 x k vectors of equal width");
  guard_norm(online.value().norm());
  ag::Tensor p = ag::l2_normalize_rows(online, kNormFloor);
  Matrix t = normalized(target).transpose();
  return ag::scale(ag::matmul(p, ag::constant(std::move(t))), -1.0);
}

std::uint64_t sim_guard_count() { return g_sim_guard.load(); }
void reset_sim_guard_count() { g_sim_guard.store(0); }

ag::Tensor loss_byol_mse(const ag::Tensor& online, const Matrix& target) {
  if (online.rows() != 1 || target.rows() != 1 || online.cols() != target.cols())
    throw ShapeError("loss_byol_mse expects two 1 x k vectors of equal width");
  ag::Tensor p = ag::l2_normalize_rows(online, kNormFloor);
  return ag::sum_squares(ag::add_constant(p, -normalized(target)));
}

ag::Tensor loss_infonce(const std::vector<ag::Tensor>& online, const std::vector<Matrix>& targets, double temperature) {
  if (temperature <= 0) throw ConfigError("infonce temperature must be positive");
  if (online.empty() || online.size() != targets.size()) throw ShapeError("infonce needs matched non-empty batches");
  std::vector<ag::Tensor> rows;
  Matrix t(static_cast<Index>(targets.size()), targets[0].cols());
  for (std::size_t i = 0; i < online.size(); ++i) {
    rows.push_back(ag::l2_normalize_rows(online[i], kNormFloor));
    t.row(static_cast<Index>(i)) = normalized(targets[i]);
  }
  ag::Tensor logits = ag::scale(ag::matmul(ag::concat_rows(rows), ag::constant(t.transpose())), 1.0 / temperature);
  std::vector<int> diag(online.size());
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  return ag::cross_entropy(logits, diag);
}

ag::Tensor loss_id_variant(IdLossKind kind, const std::vector<ag::Tensor>& online, const std::vector<Matrix>& targets,
                           double temperature) {
  if (online.empty() || online.size() != targets.size()) throw ShapeError("id loss needs matched non-empty batches");
  if (kind == IdLossKind::infonce) return loss_infonce(online, targets, temperature);
  std::vector<ag::Tensor> parts;
  for (std::size_t i = 0; i < online.size(); ++i)
    parts.push_back(kind == IdLossKind::ncs_asym ? loss_sim(online[i], targets[i]) : loss_byol_mse(online[i], targets[i]));
  return ag::weighted_sum(parts, std::vector<double>(parts.size(), 1.0 / static_cast<double>(parts.size())));
}

void ema_update(ParameterSet& target, const ParameterSet& online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw StateError("EMA momentum must lie in [0, 1]");
  for (auto& tp : target.all()) {
    const Parameter* op = online.find(tp.name);
    if (!op) throw StateError("online branch has no parameter " + tp.name);
    const Matrix& o = op->tensor.value();
    Matrix& t = tp.tensor.mutable_value();
    if (o.rows() != t.rows() || o.cols() != t.cols()) throw StateError("EMA shape mismatch for " + tp.name);
    t = tau * t + (1.0 - tau) * o;
  }
}

void copy_into_target(ParameterSet& target, const ParameterSet& online) {
  for (auto& tp : target.all()) {
    const Parameter* op = online.find(tp.name);
    if (!op) throw StateError("online branch has no parameter " + tp.name);
    if (op->tensor.rows() != tp.tensor.rows() || op->tensor.cols() != tp.tensor.cols())
      throw StateError("shape mismatch for " + tp.name);
    tp.tensor.mutable_value() = op->tensor.value();
  }
}

double ema_momentum(double tau_base, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return tau_base;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return 1.0 - (1.0 - tau_base) * (std::cos(std::numbers::pi * frac) + 1.0) / 2.0;
}

}  // namespace fsvfm
