#include "fsvfm/adapter.hpp"

#include <cmath>

#include "fsvfm/errors.hpp"

namespace fsvfm {

const char* adapter_kind_name(AdapterKind k) {
  switch (k) {
    case AdapterKind::vanilla_all_layers: return "vanilla_all_layers";
    case AdapterKind::variant1_last: return "variant1_last";
    case AdapterKind::variant2_scl: return "variant2_scl";
    case AdapterKind::variant3_proj_fa: return "variant3_proj_fa";
    case AdapterKind::variant4_no_proj: return "variant4_no_proj";
    case AdapterKind::fs_adapter: return "fs_adapter";
  }
  return "unknown";
}

AdapterKind parse_adapter_kind(const std::string& name) {
  for (auto k : {AdapterKind::vanilla_all_layers, AdapterKind::variant1_last, AdapterKind::variant2_scl,
                 AdapterKind::variant3_proj_fa, AdapterKind::variant4_no_proj, AdapterKind::fs_adapter})
    if (name == adapter_kind_name(k)) return k;
  throw ConfigError("unknown adapter kind '" + name + "'");
}

const char* fusion_name(Fusion f) { return f == Fusion::concat ? "concat" : "residual"; }

Fusion parse_fusion(const std::string& name) {
  if (name == "concat") return Fusion::concat;
  if (name == "residual") return Fusion::residual;
  throw ConfigError("unknown fusion '" + name + "'");
}

void AdapterConfig::validate(int d) const {
  const int b = bottleneck_for(d);
  if (b < 1 || b >= d) throw ConfigError("adapter bottleneck must satisfy 0 < b < d");
  if (tau_rac <= 0) throw ConfigError("contrastive temperature must be positive");
  if (lambda_rac < 0) throw ConfigError("lambda_rac must be non-negative");
  if (kind == AdapterKind::fs_adapter && fusion != Fusion::concat)
    throw ConfigError("fs_adapter uses concatenation fusion");
}

ContrastSource AdapterConfig::contrast_source() const {
  switch (kind) {
    case AdapterKind::vanilla_all_layers:
    case AdapterKind::variant1_last: return ContrastSource::none;
    case AdapterKind::variant3_proj_fa: return ContrastSource::adapter_output;
    default: return ContrastSource::bottleneck;
  }
}

bool AdapterConfig::has_projector() const {
  return kind == AdapterKind::fs_adapter || kind == AdapterKind::variant2_scl || kind == AdapterKind::variant3_proj_fa;
}

int AdapterConfig::contrast_dim(int d) const {
  switch (contrast_source()) {
    case ContrastSource::none: return 0;
    case ContrastSource::adapter_output: return d;
    case ContrastSource::bottleneck: return bottleneck_for(d);
  }
  return 0;
}

int head_input_dim(const AdapterConfig& c, int d) {
  return c.last_only() && c.fusion == Fusion::concat ? 2 * d : d;
}

AdapterOutput adapter_forward(const ag::Tensor& f_e, const ag::Tensor& w_down, const ag::Tensor& w_up) {
  if (f_e.cols() != w_down.rows() || w_down.cols() != w_up.rows() || w_up.cols() != w_down.rows())
    throw ShapeError("adapter weights do not match the feature width");
  AdapterOutput out;
  out.f_b = ag::relu(ag::matmul(f_e, w_down));
  out.f_a = ag::matmul(out.f_b, w_up);
  return out;
}

std::vector<AdapterOutput> adapter_forward(const std::vector<ag::Tensor>& f_e, const ag::Tensor& w_down,
                                           const ag::Tensor& w_up) {
  std::vector<AdapterOutput> out;
  out.reserve(f_e.size());
  for (const auto& x : f_e) out.push_back(adapter_forward(x, w_down, w_up));
  return out;
}

ag::Tensor project_bottleneck(const ag::Tensor& f_b, const ag::Tensor& w_lp, Index patch_row_begin) {
  ag::Tensor z = w_lp.defined() ? ag::matmul(f_b, w_lp) : f_b;
  return ag::l2_normalize_rows(ag::mean_rows(z, patch_row_begin, z.rows()), 1e-12);
}

ag::Tensor fuse(const ag::Tensor& f_e, const ag::Tensor& f_a, Fusion fusion, Index patch_row_begin, double scale) {
  if (fusion == Fusion::concat)
    return ag::concat_cols({ag::mean_rows(f_e, patch_row_begin, f_e.rows()), ag::mean_rows(f_a, patch_row_begin, f_a.rows())});
  ag::Tensor r = ag::add(f_e, ag::scale(f_a, scale));
  return ag::mean_rows(r, patch_row_begin, r.rows());
}

namespace {

// SupCon-style loss over unit rows: for each anchor i with positives P(i),
// -(1/|P|) sum_{j in P} log softmax_{k != i}(f_i . f_k / tau)[j], averaged
// over anchors.
ag::Tensor contrastive(const ag::Tensor& feats, const std::vector<Label>& labels, double tau, bool fake_anchors) {
  if (tau <= 0) throw ConfigError("contrastive temperature must be positive");
  if (static_cast<Index>(labels.size()) != feats.rows()) throw ShapeError("one label per feature row required");
  const Matrix& f = feats.value();
  const Index n = f.rows();
  const Matrix s = (f * f.transpose()) / tau;
  Matrix g = Matrix::Zero(n, n);  // dL/ds
  std::vector<Index> anchors;
  for (Index i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] == Label::fake && !fake_anchors) continue;
    Index pos = 0;
    for (Index j = 0; j < n; ++j) pos += (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]);
    if (pos > 0) anchors.push_back(i);
  }
  Matrix out = Matrix::Zero(1, 1);
  if (anchors.empty()) return ag::constant(out);
  const double w = 1.0 / static_cast<double>(anchors.size());
  double total = 0.0;
  for (Index i : anchors) {
    double mx = -INFINITY;
    for (Index k = 0; k < n; ++k)
      if (k != i) mx = std::max(mx, s(i, k));
    double z = 0.0;
    for (Index k = 0; k < n; ++k)
      if (k != i) z += std::exp(s(i, k) - mx);
    const double lse = mx + std::log(z);
    std::vector<Index> pos;
    for (Index j = 0; j < n; ++j)
      if (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) pos.push_back(j);
    const double inv_p = 1.0 / static_cast<double>(pos.size());
    double li = 0.0;
    for (Index j : pos) li -= (s(i, j) - lse) * inv_p;
    total += w * li;
    for (Index k = 0; k < n; ++k)
      if (k != i) g(i, k) += w * std::exp(s(i, k) - lse);
    for (Index j : pos) g(i, j) -= w * inv_p;
  }
  out(0, 0) = total;
  return ag::make_op(std::move(out), {feats}, [g, tau](ag::Node& self) {
    const Matrix& fv = self.inputs[0]->value;
    self.inputs[0]->grad_buffer() += (self.grad(0, 0) / tau) * ((g + g.transpose()) * fv);
  });
}

}  // namespace

ag::Tensor loss_rac(const ag::Tensor& f_p, const std::vector<Label>& labels, double tau) {
  return contrastive(f_p, labels, tau, false);
}

ag::Tensor loss_scl_variant(const ag::Tensor& f_p, const std::vector<Label>& labels, double tau) {
  return contrastive(f_p, labels, tau, true);
}

namespace {
Matrix xavier(int in, int out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
  return w;
}
}  // namespace

AdapterModule::AdapterModule(ParameterSet& ps, const AdapterConfig& config, int d, int layers, Rng& init)
    : config_(config), d_(d) {
  config_.validate(d);
  const int b = config_.bottleneck_for(d);
  const int n = config_.last_only() ? 1 : layers;
  for (int l = 0; l < n; ++l) {
    const std::string p = config_.last_only() ? "adapter" : "adapter." + std::to_string(l);
    w_down.push_back(ps.add(p + ".w_down", xavier(d, b, init), true));
    w_up.push_back(ps.add(p + ".w_up", Matrix::Zero(b, d), true));
  }
  if (config_.has_projector()) {
    const int k = config_.contrast_dim(d);
    w_lp = ps.add("adapter.w_lp", xavier(k, k, init), true);
  }
}

BlockHook AdapterModule::hook() const {
  if (config_.last_only()) return {};
  return [this](int layer, const ag::Tensor& x) {
    const auto l = static_cast<std::size_t>(layer);
    AdapterOutput o = adapter_forward(x, w_down.at(l), w_up.at(l));
    return ag::add(x, ag::scale(o.f_a, config_.scale));
  };
}

AdapterModule::Features AdapterModule::features(const ag::Tensor& tokens, Index patch_row_begin) const {
  Features out;
  if (!config_.last_only()) {
    out.head_input = ag::mean_rows(tokens, patch_row_begin, tokens.rows());
    return out;
  }
  AdapterOutput o = adapter_forward(tokens, w_down[0], w_up[0]);
  out.head_input = fuse(tokens, o.f_a, config_.fusion, patch_row_begin, config_.scale);
  switch (config_.contrast_source()) {
    case ContrastSource::none: break;
    case ContrastSource::bottleneck: out.f_p = project_bottleneck(o.f_b, w_lp, patch_row_begin); break;
    case ContrastSource::adapter_output: out.f_p = project_bottleneck(o.f_a, w_lp, patch_row_begin); break;
  }
  return out;
}

std::size_t count_trainable(const AdapterConfig& config, int d, int layers, bool with_head, int classes) {
  const auto dd = static_cast<std::size_t>(d);
  const auto b = static_cast<std::size_t>(config.bottleneck_for(d));
  const std::size_t per = 2 * dd * b;
  std::size_t n = config.last_only() ? per : static_cast<std::size_t>(layers) * per;
  if (config.has_projector()) {
    const auto k = static_cast<std::size_t>(config.contrast_dim(d));
    n += k * k;
  }
  if (with_head) {
    const auto in = static_cast<std::size_t>(head_input_dim(config, d));
    n += in * static_cast<std::size_t>(classes) + static_cast<std::size_t>(classes);
  }
  return n;
}

}  // namespace fsvfm
